#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cil/corpus.hpp"
#include "cil/error.hpp"
#include "cil/features.hpp"
#include "cil/model.hpp"
#include "cil/rng.hpp"

namespace cil {

inline constexpr int kStateVersion = 1;

enum class StrategyKind { FT, FTplus, FZ, FZplus, LWF, EWC, MAS, FT_Ek, LWF_Ek };

inline bool is_replay(StrategyKind kind) {
    return kind == StrategyKind::FT_Ek || kind == StrategyKind::LWF_Ek;
}

inline bool uses_distillation(StrategyKind kind) {
    return kind == StrategyKind::LWF || kind == StrategyKind::LWF_Ek;
}

inline bool uses_param_regularization(StrategyKind kind) {
    return kind == StrategyKind::EWC || kind == StrategyKind::MAS;
}

struct StrategyConfig {
    StrategyKind kind = StrategyKind::FT;
    int k_exemplars = 0;            // replay kinds
    double lambda_reg = 100.0;      // EWC / MAS
    double lambda_distill = 1.0;    // LWF
    double distill_temperature = 2.0;

    void validate() const {
        if (is_replay(kind) && k_exemplars < 1)
            throw DataError("strategy: replay kinds need k_exemplars >= 1");
        if (!std::isfinite(lambda_reg) || lambda_reg < 0.0)
            throw DataError("strategy: lambda_reg must be finite and >= 0");
        if (!std::isfinite(lambda_distill) || lambda_distill < 0.0)
            throw DataError("strategy: lambda_distill must be finite and >= 0");
        if (!(distill_temperature > 0.0))
            throw DataError("strategy: distill_temperature must be positive");
    }
};

// Strategy name <-> config. Replay kinds carry k in the name (FT_E2, LWF_E10).
inline std::string strategy_name(const StrategyConfig& cfg) {
    switch (cfg.kind) {
        case StrategyKind::FT: return "FT";
        case StrategyKind::FTplus: return "FT+";
        case StrategyKind::FZ: return "FZ";
        case StrategyKind::FZplus: return "FZ+";
        case StrategyKind::LWF: return "LWF";
        case StrategyKind::EWC: return "EWC";
        case StrategyKind::MAS: return "MAS";
        case StrategyKind::FT_Ek: return "FT_E" + std::to_string(cfg.k_exemplars);
        case StrategyKind::LWF_Ek: return "LWF_E" + std::to_string(cfg.k_exemplars);
    }
    throw DataError("unreachable strategy kind");
}

inline StrategyConfig parse_strategy(const std::string& name) {
    StrategyConfig cfg;
    std::string s = name;
    std::replace(s.begin(), s.end(), '-', '_');
    if (s == "FT") cfg.kind = StrategyKind::FT;
    else if (s == "FT+" || s == "FTplus") cfg.kind = StrategyKind::FTplus;
    else if (s == "FZ") cfg.kind = StrategyKind::FZ;
    else if (s == "FZ+" || s == "FZplus") cfg.kind = StrategyKind::FZplus;
    else if (s == "LWF") cfg.kind = StrategyKind::LWF;
    else if (s == "EWC") cfg.kind = StrategyKind::EWC;
    else if (s == "MAS") cfg.kind = StrategyKind::MAS;
    else if (s.rfind("FT_E", 0) == 0 || s.rfind("LWF_E", 0) == 0) {
        const bool lwf = s.rfind("LWF_E", 0) == 0;
        const std::string digits = s.substr(lwf ? 5 : 4);
        if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos)
            throw UsageError("unknown strategy name: " + name);
        cfg.kind = lwf ? StrategyKind::LWF_Ek : StrategyKind::FT_Ek;
        cfg.k_exemplars = std::stoi(digits);
        if (cfg.k_exemplars < 1) throw UsageError("strategy " + name + ": k must be >= 1");
    } else {
        throw UsageError("unknown strategy name: " + name);
    }
    return cfg;
}

// Per-parameter nonnegative importance weights, same shape as the trunk and
// the heads that existed when it was produced. Counts track how many samples
// contributed to each block so later sessions merge as a running mean.
struct ImportanceMap {
    ParamSet omega;
    std::int64_t trunk_count = 0;
    std::vector<std::int64_t> head_counts;
    int session = -1;
};

struct ExemplarStore {
    struct Entry {
        int iid = 0;
        std::string author_id;
        std::string text;
    };
    std::vector<Entry> entries;  // append order: session, then author, then draw order

    std::size_t size() const { return entries.size(); }
    std::map<int, std::size_t> per_author_counts() const {
        std::map<int, std::size_t> counts;
        for (const auto& e : entries) ++counts[e.iid];
        return counts;
    }
};

// Everything a strategy carries between sessions.
struct StrategyState {
    int sessions_trained = 0;
    std::optional<ParamSnapshot> previous;     // teacher / anchor model
    std::optional<ImportanceMap> importance;   // EWC / MAS
    ExemplarStore exemplars;
};

// --- loss pieces ----------------------------------------------------------

// lambda * 1/2 * sum_i omega_i (theta_i - anchor_i)^2 over the parameters the
// snapshot covers; gradient is lambda * omega_i (theta_i - anchor_i). Heads
// newer than the snapshot contribute nothing.
inline LossGrads param_reg_loss(const ModelState& model, const ParamSnapshot& anchor,
                                const ImportanceMap& importance, double lambda_reg) {
    const ModelState& ref = anchor.model;
    if (ref.num_heads() > model.num_heads() ||
        static_cast<int>(importance.omega.heads.size()) != ref.num_heads())
        throw DataError("param_reg_loss: importance/snapshot shape mismatch");

    LossGrads out;
    out.grads = zeros_like(model);
    auto add_block = [&](const auto& theta, const auto& theta_prev, const auto& omega, auto& grad) {
        if (theta.rows() != theta_prev.rows() || theta.cols() != theta_prev.cols() ||
            theta.rows() != omega.rows() || theta.cols() != omega.cols())
            throw DataError("param_reg_loss: parameter block shape mismatch");
        const auto diff = (theta - theta_prev).eval();
        out.loss += 0.5 * lambda_reg * (omega.array() * diff.array().square()).sum();
        grad += (lambda_reg * (omega.array() * diff.array())).matrix();
    };

    if (model.hidden_dim > 0) {
        add_block(model.trunk.W, ref.trunk.W, importance.omega.trunk.W, out.grads.trunk.W);
        add_block(model.trunk.b, ref.trunk.b, importance.omega.trunk.b, out.grads.trunk.b);
    }
    for (int k = 0; k < ref.num_heads(); ++k) {
        add_block(model.heads[k].W, ref.heads[k].W, importance.omega.heads[k].W, out.grads.heads[k].W);
        add_block(model.heads[k].b, ref.heads[k].b, importance.omega.heads[k].b, out.grads.heads[k].b);
    }
    return out;
}

// Distillation term of the LWF loss: mean over the batch of the cross-entropy
// between the teacher's and the student's tempered softmax over the teacher's
// heads. Teacher outputs are constants; gradients flow through the student.
inline LossGrads lwf_distill_term(const ModelState& student, const ParamSnapshot& teacher,
                                  const BatchView& batch, double lambda_distill, double temperature) {
    const int old_heads = teacher.model.num_heads();
    if (old_heads < 1) throw DataError("lwf: teacher snapshot has no heads");
    if (old_heads >= student.num_heads())
        throw DataError("lwf: student must have more heads than the teacher");

    LossGrads out;
    out.grads = zeros_like(student);
    if (batch.empty() || lambda_distill == 0.0) return out;

    const double inv_n = 1.0 / static_cast<double>(batch.size());
    const double tau = temperature;
    for (const LabeledExample* ex : batch) {
        const Eigen::VectorXd zt = forward(teacher.model, ex->x, HeadSelect::all());
        const Eigen::VectorXd pt = softmax(zt / tau);

        const Eigen::VectorXd h = detail::trunk_output(student, ex->x);
        const Eigen::VectorXd zs = detail::head_logits(student, h, 0, old_heads - 1);
        const Eigen::VectorXd u = zs / tau;
        const double m = u.maxCoeff();
        const double logsum = std::log((u.array() - m).exp().sum()) + m;
        out.loss += lambda_distill * inv_n * (logsum - pt.dot(u));

        const Eigen::VectorXd q = softmax(u);
        const Eigen::VectorXd dz = lambda_distill * inv_n / tau * (q - pt);
        detail::accumulate_logit_grads(student, ex->x, h, dz, 0, old_heads - 1, out.grads);
    }
    return out;
}

// Full LWF loss: cross-entropy on the current head plus the distillation term.
inline LossGrads lwf_loss(const ModelState& model, const ParamSnapshot& teacher, const BatchView& batch,
                          double lambda_distill, double temperature, double weight_decay = 0.0) {
    const int t = model.num_heads() - 1;
    LossGrads out = ce_loss_and_grads(model, batch, HeadSelect::only(t), weight_decay);
    const LossGrads distill = lwf_distill_term(model, teacher, batch, lambda_distill, temperature);
    out.loss += distill.loss;
    if (model.hidden_dim > 0) {
        out.grads.trunk.W += distill.grads.trunk.W;
        out.grads.trunk.b += distill.grads.trunk.b;
    }
    for (std::size_t k = 0; k < out.grads.heads.size(); ++k) {
        out.grads.heads[k].W += distill.grads.heads[k].W;
        out.grads.heads[k].b += distill.grads.heads[k].b;
    }
    return out;
}

// --- importance estimators --------------------------------------------------

// Empirical Fisher diagonal: mean over samples of the squared gradient of the
// log-probability of the true label under the full softmax.
inline ImportanceMap ewc_importance(const ModelState& model, const std::vector<LabeledExample>& data) {
    if (data.empty()) throw DataError("ewc_importance: empty data");
    ImportanceMap imp;
    imp.omega = zeros_like(model);
    for (const auto& ex : data) {
        const LossGrads g = ce_loss_and_grads(model, BatchView{&ex}, HeadSelect::all(), 0.0);
        if (model.hidden_dim > 0) {
            imp.omega.trunk.W.array() += g.grads.trunk.W.array().square();
            imp.omega.trunk.b.array() += g.grads.trunk.b.array().square();
        }
        for (std::size_t k = 0; k < g.grads.heads.size(); ++k) {
            imp.omega.heads[k].W.array() += g.grads.heads[k].W.array().square();
            imp.omega.heads[k].b.array() += g.grads.heads[k].b.array().square();
        }
    }
    const double inv_n = 1.0 / static_cast<double>(data.size());
    if (model.hidden_dim > 0) {
        imp.omega.trunk.W *= inv_n;
        imp.omega.trunk.b *= inv_n;
    }
    for (auto& head : imp.omega.heads) {
        head.W *= inv_n;
        head.b *= inv_n;
    }
    imp.trunk_count = static_cast<std::int64_t>(data.size());
    imp.head_counts.assign(model.heads.size(), static_cast<std::int64_t>(data.size()));
    return imp;
}

// Label-free sensitivity: mean over samples of the absolute gradient of the
// squared L2 norm of the concatenated logits, 1/2 * ||z(x)||^2.
inline ImportanceMap mas_importance(const ModelState& model, const std::vector<LabeledExample>& data) {
    if (data.empty()) throw DataError("mas_importance: empty data");
    ImportanceMap imp;
    imp.omega = zeros_like(model);
    const int last = model.num_heads() - 1;
    for (const auto& ex : data) {
        const Eigen::VectorXd h = detail::trunk_output(model, ex.x);
        const Eigen::VectorXd z = detail::head_logits(model, h, 0, last);
        ParamSet grads = zeros_like(model);
        detail::accumulate_logit_grads(model, ex.x, h, z, 0, last, grads);  // d(1/2 ||z||^2)/dz = z
        if (model.hidden_dim > 0) {
            imp.omega.trunk.W.array() += grads.trunk.W.array().abs();
            imp.omega.trunk.b.array() += grads.trunk.b.array().abs();
        }
        for (std::size_t k = 0; k < grads.heads.size(); ++k) {
            imp.omega.heads[k].W.array() += grads.heads[k].W.array().abs();
            imp.omega.heads[k].b.array() += grads.heads[k].b.array().abs();
        }
    }
    const double inv_n = 1.0 / static_cast<double>(data.size());
    if (model.hidden_dim > 0) {
        imp.omega.trunk.W *= inv_n;
        imp.omega.trunk.b *= inv_n;
    }
    for (auto& head : imp.omega.heads) {
        head.W *= inv_n;
        head.b *= inv_n;
    }
    imp.trunk_count = static_cast<std::int64_t>(data.size());
    imp.head_counts.assign(model.heads.size(), static_cast<std::int64_t>(data.size()));
    return imp;
}

// Running mean across sessions, weighted by sample counts per block. Heads the
// accumulator has not seen yet are adopted from the fresh map.
inline void merge_importance(ImportanceMap& total, const ImportanceMap& fresh) {
    auto blend = [](auto& acc, std::int64_t n_acc, const auto& add, std::int64_t n_add) {
        const double wa = static_cast<double>(n_acc) / static_cast<double>(n_acc + n_add);
        const double wb = static_cast<double>(n_add) / static_cast<double>(n_acc + n_add);
        acc = wa * acc + wb * add;
    };
    if (total.omega.trunk.W.size() > 0 && fresh.omega.trunk.W.size() > 0) {
        blend(total.omega.trunk.W, total.trunk_count, fresh.omega.trunk.W, fresh.trunk_count);
        blend(total.omega.trunk.b, total.trunk_count, fresh.omega.trunk.b, fresh.trunk_count);
    }
    total.trunk_count += fresh.trunk_count;
    for (std::size_t k = 0; k < fresh.omega.heads.size(); ++k) {
        if (k < total.omega.heads.size()) {
            blend(total.omega.heads[k].W, total.head_counts[k], fresh.omega.heads[k].W, fresh.head_counts[k]);
            blend(total.omega.heads[k].b, total.head_counts[k], fresh.omega.heads[k].b, fresh.head_counts[k]);
            total.head_counts[k] += fresh.head_counts[k];
        } else {
            total.omega.heads.push_back(fresh.omega.heads[k]);
            total.head_counts.push_back(fresh.head_counts[k]);
        }
    }
    total.session = fresh.session;
}

// --- exemplars --------------------------------------------------------------

// min(k, available) train documents per author, sampled without replacement.
inline std::vector<ExemplarStore::Entry> sample_exemplars(const std::vector<AuthorSplit>& session_train,
                                                          int k, Rng& rng) {
    if (k < 1) throw DataError("sample_exemplars: k must be >= 1");
    std::vector<ExemplarStore::Entry> out;
    for (const auto& author : session_train) {
        const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), author.texts.size());
        for (std::size_t idx : sample_without_replacement(rng, author.texts.size(), take))
            out.push_back({author.iid, author.author_id, author.texts[idx]});
    }
    return out;
}

// --- session training ---------------------------------------------------------

namespace detail {

inline void add_grads(ParamSet& acc, const ParamSet& add) {
    if (acc.trunk.W.size() > 0) {
        acc.trunk.W += add.trunk.W;
        acc.trunk.b += add.trunk.b;
    }
    for (std::size_t k = 0; k < acc.heads.size(); ++k) {
        acc.heads[k].W += add.heads[k].W;
        acc.heads[k].b += add.heads[k].b;
    }
}

// 0.5 * wd * ||theta||^2 over trunk + selected heads; used by loss variants
// that cannot delegate the decay to a single ce_loss_and_grads call.
inline LossGrads weight_decay_term(const ModelState& model, HeadSelect select, double wd) {
    LossGrads out;
    out.grads = zeros_like(model);
    if (wd <= 0.0) return out;
    const auto [first, last] = head_range(model, select);
    if (model.hidden_dim > 0) {
        out.loss += 0.5 * wd * (model.trunk.W.squaredNorm() + model.trunk.b.squaredNorm());
        out.grads.trunk.W = wd * model.trunk.W;
        out.grads.trunk.b = wd * model.trunk.b;
    }
    for (int k = first; k <= last; ++k) {
        out.loss += 0.5 * wd * (model.heads[k].W.squaredNorm() + model.heads[k].b.squaredNorm());
        out.grads.heads[k].W = wd * model.heads[k].W;
        out.grads.heads[k].b = wd * model.heads[k].b;
    }
    return out;
}

// Epoch/batch loop shared by every strategy. The per-epoch order is a pure
// function of (seed, session, epoch), which is what makes resumed runs equal
// uninterrupted ones.
template <typename LossFn>
void run_epochs(ModelState& model, const std::vector<LabeledExample>& pool, const TrainConfig& tcfg,
                const TrainMask& mask, int session_index, LossFn&& batch_loss) {
    if (pool.empty()) throw DataError("train_session: empty training pool");
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        Rng rng = derived_rng(tcfg.seed, "batch-order",
                              (static_cast<std::uint64_t>(session_index) << 32) |
                                  static_cast<std::uint64_t>(epoch));
        shuffle(order, rng);
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(tcfg.batch_size)) {
            const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(tcfg.batch_size));
            BatchView batch;
            batch.reserve(end - at);
            for (std::size_t i = at; i < end; ++i) batch.push_back(&pool[order[i]]);
            const LossGrads lg = batch_loss(batch);
            if (!std::isfinite(lg.loss))
                throw NumericError("non-finite loss at session " + std::to_string(session_index) +
                                   " epoch " + std::to_string(epoch));
            sgd_step(model, lg.grads, tcfg.learning_rate, mask);
        }
    }
}

}  // namespace detail

// LWF over a replayed pool: current-session samples get cross-entropy on the
// new head, exemplar samples get cross-entropy over all heads, and every
// sample contributes to the distillation term.
inline LossGrads lwf_replay_loss(const ModelState& model, const ParamSnapshot& teacher,
                                 const BatchView& batch, double lambda_distill, double temperature,
                                 double weight_decay = 0.0) {
    const int t = model.num_heads() - 1;
    const int current_base = model.class_offsets[t];
    BatchView current, exemplar;
    for (const LabeledExample* ex : batch)
        (ex->label >= current_base ? current : exemplar).push_back(ex);

    LossGrads out = detail::weight_decay_term(model, HeadSelect::only(t), weight_decay);
    if (!current.empty()) {
        const LossGrads ce = ce_loss_and_grads(model, current, HeadSelect::only(t), 0.0);
        out.loss += ce.loss;
        detail::add_grads(out.grads, ce.grads);
    }
    if (!exemplar.empty()) {
        const LossGrads ce = ce_loss_and_grads(model, exemplar, HeadSelect::all(), 0.0);
        out.loss += ce.loss;
        detail::add_grads(out.grads, ce.grads);
    }
    const LossGrads distill = lwf_distill_term(model, teacher, batch, lambda_distill, temperature);
    out.loss += distill.loss;
    detail::add_grads(out.grads, distill.grads);
    return out;
}

// One incremental session. Adds a head for the new authors, trains with the
// strategy's mask and loss, then updates the carried state (teacher snapshot,
// importance accumulators, exemplar store). Session 0 is identical plain
// supervised training for every strategy; the machinery only engages from
// session 1 on.
inline void train_session(ModelState& model, const StrategyConfig& strategy, StrategyState& state,
                          const std::vector<AuthorSplit>& session_train, const TrainConfig& tcfg,
                          const FeaturizerConfig& fcfg) {
    strategy.validate();
    tcfg.validate();
    const int t = state.sessions_trained;
    if (model.num_heads() != t)
        throw DataError("train_session: model has " + std::to_string(model.num_heads()) +
                        " heads but state expects session " + std::to_string(t));
    if (session_train.empty()) throw DataError("train_session: session has no authors");

    // New authors must continue the global iid sequence; anything else means
    // session disjointness was violated upstream.
    std::set<int> iids;
    for (const auto& author : session_train) iids.insert(author.iid);
    if (iids.size() != session_train.size())
        throw DataError("train_session: duplicate author iids in session");
    const int base = model.total_classes();
    if (*iids.begin() != base ||
        *iids.rbegin() != base + static_cast<int>(iids.size()) - 1)
        throw DataError("train_session: session iids [" + std::to_string(*iids.begin()) + ", " +
                        std::to_string(*iids.rbegin()) + "] do not extend the seen range (next iid " +
                        std::to_string(base) + "); sessions must be author-disjoint");

    Rng head_rng = derived_rng(tcfg.seed, "head-init", static_cast<std::uint64_t>(t));
    add_head(model, static_cast<int>(iids.size()), head_rng);

    std::vector<LabeledExample> pool;
    for (const auto& author : session_train)
        for (const auto& text : author.texts) pool.push_back({featurize(text, fcfg), author.iid});
    const std::size_t n_current = pool.size();

    if (is_replay(strategy.kind) && t > 0) {
        if (state.exemplars.entries.empty())
            std::cerr << "warning: replay strategy at session " << t << " with an empty exemplar store\n";
        for (const auto& e : state.exemplars.entries) pool.push_back({featurize(e.text, fcfg), e.iid});
    }

    const double wd = tcfg.weight_decay;
    const int t_head = model.num_heads() - 1;
    TrainMask mask = TrainMask::everything(model);
    std::function<LossGrads(const BatchView&)> batch_loss;

    if (t == 0) {
        batch_loss = [&](const BatchView& b) { return ce_loss_and_grads(model, b, HeadSelect::all(), wd); };
    } else {
        switch (strategy.kind) {
            case StrategyKind::FT:
            case StrategyKind::FT_Ek:
                batch_loss = [&](const BatchView& b) {
                    return ce_loss_and_grads(model, b, HeadSelect::all(), wd);
                };
                break;
            case StrategyKind::FTplus:
                mask = TrainMask::trunk_and_head(model, t_head);
                batch_loss = [&](const BatchView& b) {
                    return ce_loss_and_grads(model, b, HeadSelect::only(t_head), wd);
                };
                break;
            case StrategyKind::FZ:
                mask = TrainMask::heads_only(model);
                batch_loss = [&](const BatchView& b) {
                    return ce_loss_and_grads(model, b, HeadSelect::all(), wd);
                };
                break;
            case StrategyKind::FZplus:
                mask = TrainMask::head_only(model, t_head);
                batch_loss = [&](const BatchView& b) {
                    return ce_loss_and_grads(model, b, HeadSelect::only(t_head), wd);
                };
                break;
            case StrategyKind::LWF:
                if (!state.previous) throw DataError("LWF: missing teacher snapshot on non-initial session");
                batch_loss = [&](const BatchView& b) {
                    return lwf_loss(model, *state.previous, b, strategy.lambda_distill,
                                    strategy.distill_temperature, wd);
                };
                break;
            case StrategyKind::LWF_Ek:
                if (!state.previous) throw DataError("LWF_Ek: missing teacher snapshot on non-initial session");
                batch_loss = [&](const BatchView& b) {
                    return lwf_replay_loss(model, *state.previous, b, strategy.lambda_distill,
                                           strategy.distill_temperature, wd);
                };
                break;
            case StrategyKind::EWC:
            case StrategyKind::MAS:
                if (!state.previous || !state.importance)
                    throw DataError(strategy_name(strategy) +
                                    ": missing snapshot/importance on non-initial session");
                batch_loss = [&](const BatchView& b) {
                    LossGrads out = ce_loss_and_grads(model, b, HeadSelect::all(), wd);
                    const LossGrads reg =
                        param_reg_loss(model, *state.previous, *state.importance, strategy.lambda_reg);
                    out.loss += reg.loss;
                    detail::add_grads(out.grads, reg.grads);
                    return out;
                };
                break;
        }
    }

    detail::run_epochs(model, pool, tcfg, mask, t, batch_loss);

    // End-of-session bookkeeping for the next increment.
    if (uses_distillation(strategy.kind) || uses_param_regularization(strategy.kind))
        state.previous = snapshot(model, t);
    if (uses_param_regularization(strategy.kind)) {
        std::vector<LabeledExample> current(pool.begin(), pool.begin() + static_cast<long>(n_current));
        ImportanceMap fresh = strategy.kind == StrategyKind::EWC ? ewc_importance(model, current)
                                                                 : mas_importance(model, current);
        fresh.session = t;
        if (state.importance)
            merge_importance(*state.importance, fresh);
        else
            state.importance = std::move(fresh);
    }
    if (is_replay(strategy.kind)) {
        Rng ex_rng = derived_rng(tcfg.seed, "exemplars", static_cast<std::uint64_t>(t));
        for (auto& e : sample_exemplars(session_train, strategy.k_exemplars, ex_rng))
            state.exemplars.entries.push_back(std::move(e));
    }
    state.sessions_trained = t + 1;
}

// --- strategy state persistence ---------------------------------------------

namespace detail {

inline nlohmann::json paramset_to_json(const ParamSet& p, bool has_trunk) {
    nlohmann::json doc;
    if (has_trunk) doc["trunk"] = affine_to_json(p.trunk);
    nlohmann::json heads = nlohmann::json::array();
    for (const auto& h : p.heads) heads.push_back(affine_to_json(h));
    doc["heads"] = std::move(heads);
    return doc;
}

inline ParamSet paramset_from_json(const nlohmann::json& doc) {
    ParamSet p;
    if (doc.contains("trunk")) p.trunk = affine_from_json(doc.at("trunk"));
    for (const auto& h : doc.at("heads")) p.heads.push_back(affine_from_json(h));
    return p;
}

inline nlohmann::json snapshot_to_json(const ParamSnapshot& snap) {
    nlohmann::json doc{{"session", snap.session},
                       {"feature_dim", snap.model.feature_dim},
                       {"hidden_dim", snap.model.hidden_dim},
                       {"class_offsets", snap.model.class_offsets}};
    if (snap.model.hidden_dim > 0) doc["trunk"] = affine_to_json(snap.model.trunk);
    nlohmann::json heads = nlohmann::json::array();
    for (const auto& h : snap.model.heads) heads.push_back(affine_to_json(h));
    doc["heads"] = std::move(heads);
    return doc;
}

inline ParamSnapshot snapshot_from_json(const nlohmann::json& doc) {
    ParamSnapshot snap;
    snap.session = doc.at("session").get<int>();
    snap.model.feature_dim = doc.at("feature_dim").get<int>();
    snap.model.hidden_dim = doc.at("hidden_dim").get<int>();
    snap.model.class_offsets = doc.at("class_offsets").get<std::vector<int>>();
    if (snap.model.hidden_dim > 0) snap.model.trunk = affine_from_json(doc.at("trunk"));
    for (const auto& h : doc.at("heads")) snap.model.heads.push_back(affine_from_json(h));
    return snap;
}

}  // namespace detail

inline nlohmann::json strategy_state_to_json(const StrategyState& state) {
    nlohmann::json doc{{"version", kStateVersion}, {"sessions_trained", state.sessions_trained}};
    doc["snapshot"] = state.previous ? detail::snapshot_to_json(*state.previous) : nlohmann::json();
    if (state.importance) {
        const auto& imp = *state.importance;
        doc["importance"] = {{"session", imp.session},
                             {"trunk_count", imp.trunk_count},
                             {"head_counts", imp.head_counts},
                             {"omega", detail::paramset_to_json(imp.omega, imp.omega.trunk.W.size() > 0)}};
    } else {
        doc["importance"] = nlohmann::json();
    }
    nlohmann::json exemplars = nlohmann::json::array();
    for (const auto& e : state.exemplars.entries)
        exemplars.push_back({{"iid", e.iid}, {"author_id", e.author_id}, {"text", e.text}});
    doc["exemplars"] = std::move(exemplars);
    return doc;
}

inline StrategyState strategy_state_from_json(const nlohmann::json& doc) {
    if (!doc.contains("version") || doc["version"].get<int>() != kStateVersion)
        throw DataError("strategy state: version mismatch");
    StrategyState state;
    state.sessions_trained = doc.at("sessions_trained").get<int>();
    if (!doc.at("snapshot").is_null()) state.previous = detail::snapshot_from_json(doc.at("snapshot"));
    if (!doc.at("importance").is_null()) {
        const auto& imp = doc.at("importance");
        ImportanceMap map;
        map.session = imp.at("session").get<int>();
        map.trunk_count = imp.at("trunk_count").get<std::int64_t>();
        map.head_counts = imp.at("head_counts").get<std::vector<std::int64_t>>();
        map.omega = detail::paramset_from_json(imp.at("omega"));
        state.importance = std::move(map);
    }
    for (const auto& e : doc.at("exemplars")) {
        state.exemplars.entries.push_back({e.at("iid").get<int>(), e.at("author_id").get<std::string>(),
                                           e.at("text").get<std::string>()});
    }
    return state;
}

}  // namespace cil
