#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cil/corpus.hpp"
#include "cil/eval.hpp"
#include "cil/strategies.hpp"
#include "cil/synth.hpp"
#include "test_util.hpp"

namespace {

cil::FeaturizerConfig tiny_featurizer() {
    cil::FeaturizerConfig cfg;
    cfg.dim = 1 << 8;
    return cfg;
}

// Two-session synthetic setup shared by the behavioral tests.
struct Fixture {
    cil::CILData data;
    cil::FeaturizerConfig fcfg = tiny_featurizer();
    cil::TrainConfig tcfg;

    explicit Fixture(int sessions = 2, int authors = 4, std::uint64_t seed = 5) {
        cil::SynthConfig synth;
        synth.authors = authors;
        synth.docs_per_author = 10;
        synth.tokens_per_doc = 12;
        synth.seed = 91;
        cil::SessionSpec spec;
        spec.ratios.assign(static_cast<std::size_t>(sessions), 1.0 / sessions);
        spec.seed = seed;
        data = cil::build_cil_data(cil::synth_author_corpus(synth), spec);
        tcfg.epochs = 2;
        tcfg.batch_size = 8;
        tcfg.learning_rate = 0.5;
        tcfg.seed = seed;
    }
};

cil::ModelState fresh_model(const Fixture& fx, int hidden_dim) {
    cil::Rng rng = cil::derived_rng(fx.tcfg.seed, "trunk-init");
    return cil::init_model(fx.fcfg.total_dim(), hidden_dim, rng);
}

std::string model_bytes(const cil::ModelState& model, const cil::FeaturizerConfig& fcfg) {
    return cil::model_to_json(model, fcfg, {}).dump();
}

cil::ModelState run_all_sessions(const Fixture& fx, const cil::StrategyConfig& strategy, int hidden_dim,
                                 cil::StrategyState* state_out = nullptr) {
    auto model = fresh_model(fx, hidden_dim);
    cil::StrategyState state;
    for (const auto& session : fx.data.sessions)
        cil::train_session(model, strategy, state, session.train, fx.tcfg, fx.fcfg);
    if (state_out) *state_out = state;
    return model;
}

std::vector<double*> all_params(cil::ModelState& model) {
    std::vector<double*> out;
    if (model.hidden_dim > 0) {
        for (Eigen::Index i = 0; i < model.trunk.W.size(); ++i) out.push_back(model.trunk.W.data() + i);
        for (Eigen::Index i = 0; i < model.trunk.b.size(); ++i) out.push_back(model.trunk.b.data() + i);
    }
    for (auto& head : model.heads) {
        for (Eigen::Index i = 0; i < head.W.size(); ++i) out.push_back(head.W.data() + i);
        for (Eigen::Index i = 0; i < head.b.size(); ++i) out.push_back(head.b.data() + i);
    }
    return out;
}

std::vector<double> flatten(const cil::ModelState& model, const cil::ParamSet& grads) {
    std::vector<double> out;
    if (model.hidden_dim > 0) {
        for (Eigen::Index i = 0; i < grads.trunk.W.size(); ++i) out.push_back(*(grads.trunk.W.data() + i));
        for (Eigen::Index i = 0; i < grads.trunk.b.size(); ++i) out.push_back(*(grads.trunk.b.data() + i));
    }
    for (const auto& head : grads.heads) {
        for (Eigen::Index i = 0; i < head.W.size(); ++i) out.push_back(*(head.W.data() + i));
        for (Eigen::Index i = 0; i < head.b.size(); ++i) out.push_back(*(head.b.data() + i));
    }
    return out;
}

double max_relative_error(cil::ModelState& model, const std::function<double()>& loss,
                          const std::vector<double>& analytic, double eps = 1e-5) {
    const auto params = all_params(model);
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = *params[i];
        *params[i] = saved + eps;
        const double up = loss();
        *params[i] = saved - eps;
        const double down = loss();
        *params[i] = saved;
        const double fd = (up - down) / (2.0 * eps);
        const double denom = std::max({1.0, std::abs(fd), std::abs(analytic[i])});
        worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
    }
    return worst;
}

cil::ModelState random_model(int feature_dim, int hidden_dim, const std::vector<int>& head_classes,
                             cil::Rng& rng) {
    cil::ModelState model;
    model.feature_dim = feature_dim;
    model.hidden_dim = hidden_dim;
    auto fill = [&](Eigen::MatrixXd& m, int rows, int cols) {
        m.resize(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) m(r, c) = cil::uniform_real(rng, -1.0, 1.0);
    };
    if (hidden_dim > 0) {
        fill(model.trunk.W, hidden_dim, feature_dim);
        Eigen::MatrixXd b;
        fill(b, hidden_dim, 1);
        model.trunk.b = b;
    }
    for (int classes : head_classes) {
        cil::Affine head;
        fill(head.W, classes, model.head_input_dim());
        Eigen::MatrixXd b;
        fill(b, classes, 1);
        head.b = b;
        model.class_offsets.push_back(model.total_classes());
        model.heads.push_back(std::move(head));
    }
    return model;
}

cil::FeatureVector random_input(int dim, cil::Rng& rng) {
    cil::FeatureVector x(dim);
    for (int i = 0; i < dim; ++i) x[i] = cil::uniform_real(rng, -1.0, 1.0);
    return x;
}

}  // namespace

TEST_CASE("strategy names parse both spellings") {
    REQUIRE(cil::parse_strategy("FT").kind == cil::StrategyKind::FT);
    REQUIRE(cil::parse_strategy("FT+").kind == cil::StrategyKind::FTplus);
    REQUIRE(cil::parse_strategy("FZ+").kind == cil::StrategyKind::FZplus);
    const auto fte = cil::parse_strategy("FT-E2");
    REQUIRE(fte.kind == cil::StrategyKind::FT_Ek);
    REQUIRE(fte.k_exemplars == 2);
    const auto lwfe = cil::parse_strategy("LWF_E10");
    REQUIRE(lwfe.kind == cil::StrategyKind::LWF_Ek);
    REQUIRE(lwfe.k_exemplars == 10);
    REQUIRE(cil::strategy_name(lwfe) == "LWF_E10");
    REQUIRE_THROWS_AS(cil::parse_strategy("SGD"), cil::UsageError);
}

TEST_CASE("param_reg_loss is zero at the anchor") {
    cil::Rng rng(1);
    auto model = random_model(3, 2, {2}, rng);
    const auto anchor = cil::snapshot(model, 0);
    cil::ImportanceMap imp;
    imp.omega = cil::zeros_like(model);
    imp.omega.trunk.W.setConstant(1.0);
    imp.omega.trunk.b.setConstant(1.0);
    imp.omega.heads[0].W.setConstant(1.0);
    imp.omega.heads[0].b.setConstant(1.0);
    imp.head_counts = {1};
    imp.trunk_count = 1;

    const auto lg = cil::param_reg_loss(model, anchor, imp, 100.0);
    REQUIRE(lg.loss == 0.0);
    REQUIRE(lg.grads.trunk.W.norm() == 0.0);
    REQUIRE(lg.grads.heads[0].W.norm() == 0.0);
}

TEST_CASE("param_reg_loss matches the hand-evaluated formula") {
    // Two parameters: omega = (1, 2), delta = (0.5, -0.5), lambda = 1
    // -> 0.5 * (1 * 0.25 + 2 * 0.25) = 0.375.
    cil::ModelState model;
    model.feature_dim = 2;
    model.hidden_dim = 0;
    model.heads.push_back({Eigen::MatrixXd::Zero(1, 2), Eigen::VectorXd::Zero(1)});
    model.class_offsets.push_back(0);
    auto anchor = cil::snapshot(model, 0);
    model.heads[0].W(0, 0) = 0.5;
    model.heads[0].W(0, 1) = -0.5;

    cil::ImportanceMap imp;
    imp.omega = cil::zeros_like(model);
    imp.omega.heads[0].W(0, 0) = 1.0;
    imp.omega.heads[0].W(0, 1) = 2.0;
    imp.head_counts = {1};

    const auto lg = cil::param_reg_loss(model, anchor, imp, 1.0);
    REQUIRE(lg.loss == Catch::Approx(0.375).margin(1e-15));
    REQUIRE(lg.grads.heads[0].W(0, 0) == Catch::Approx(1.0 * 0.5).margin(1e-15));
    REQUIRE(lg.grads.heads[0].W(0, 1) == Catch::Approx(2.0 * -0.5).margin(1e-15));

    // Zero importance reduces the term to nothing.
    cil::ImportanceMap zero;
    zero.omega = cil::zeros_like(model);
    zero.head_counts = {1};
    REQUIRE(cil::param_reg_loss(model, anchor, zero, 1.0).loss == 0.0);
}

TEST_CASE("ce + param_reg gradients pass finite differences") {
    cil::Rng rng(2);
    auto model = random_model(3, 2, {2, 2}, rng);
    auto anchor_model = random_model(3, 2, {2, 2}, rng);
    anchor_model.heads.pop_back();
    anchor_model.class_offsets.pop_back();
    const auto anchor = cil::snapshot(anchor_model, 0);

    cil::ImportanceMap imp;
    imp.omega = cil::zeros_like(anchor_model);
    auto randomize_abs = [&](Eigen::MatrixXd& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) *(m.data() + i) = std::abs(cil::uniform_real(rng, 0.0, 2.0));
    };
    randomize_abs(imp.omega.trunk.W);
    Eigen::MatrixXd tb = imp.omega.trunk.b;
    randomize_abs(tb);
    imp.omega.trunk.b = tb;
    randomize_abs(imp.omega.heads[0].W);
    Eigen::MatrixXd hb = imp.omega.heads[0].b;
    randomize_abs(hb);
    imp.omega.heads[0].b = hb;
    imp.head_counts = {4};
    imp.trunk_count = 4;

    std::vector<cil::LabeledExample> batch;
    for (int i = 0; i < 3; ++i) batch.push_back({random_input(3, rng), i % 4});
    const auto view = cil::make_batch_view(batch);

    auto total = [&] {
        auto lg = cil::ce_loss_and_grads(model, view, cil::HeadSelect::all(), 0.0);
        return lg.loss + cil::param_reg_loss(model, anchor, imp, 3.0).loss;
    };
    auto lg = cil::ce_loss_and_grads(model, view, cil::HeadSelect::all(), 0.0);
    const auto reg = cil::param_reg_loss(model, anchor, imp, 3.0);
    lg.grads.trunk.W += reg.grads.trunk.W;
    lg.grads.trunk.b += reg.grads.trunk.b;
    for (std::size_t k = 0; k < lg.grads.heads.size(); ++k) {
        lg.grads.heads[k].W += reg.grads.heads[k].W;
        lg.grads.heads[k].b += reg.grads.heads[k].b;
    }
    REQUIRE(max_relative_error(model, total, flatten(model, lg.grads)) < 1e-4);
}

TEST_CASE("lwf self-distillation equals the teacher entropy") {
    // Teacher == student on the old head with uniform logits over 2 classes:
    // the distillation cross-entropy is exactly ln 2.
    cil::ModelState teacher;
    teacher.feature_dim = 2;
    teacher.hidden_dim = 0;
    teacher.heads.push_back({Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(2)});
    teacher.class_offsets.push_back(0);

    cil::ModelState student = teacher;
    cil::Rng rng(3);
    cil::add_head(student, 2, rng);

    std::vector<cil::LabeledExample> batch{{random_input(2, rng), 2}};
    const auto view = cil::make_batch_view(batch);
    const auto distill =
        cil::lwf_distill_term(student, cil::snapshot(teacher, 0), view, 1.0, 1.0);
    REQUIRE(distill.loss == Catch::Approx(std::log(2.0)).margin(1e-12));
}

TEST_CASE("lwf with lambda zero reduces to the ft+ loss") {
    cil::Rng rng(4);
    auto student = random_model(3, 2, {2, 3}, rng);
    auto teacher_model = student;
    teacher_model.heads.pop_back();
    teacher_model.class_offsets.pop_back();
    const auto teacher = cil::snapshot(teacher_model, 0);

    std::vector<cil::LabeledExample> batch;
    for (int i = 0; i < 3; ++i) batch.push_back({random_input(3, rng), 2 + (i % 3)});
    const auto view = cil::make_batch_view(batch);

    const auto lwf = cil::lwf_loss(student, teacher, view, 0.0, 1.0, 0.01);
    const auto ftp = cil::ce_loss_and_grads(student, view, cil::HeadSelect::only(1), 0.01);
    REQUIRE(lwf.loss == ftp.loss);
    REQUIRE((lwf.grads.trunk.W.array() == ftp.grads.trunk.W.array()).all());
    REQUIRE((lwf.grads.heads[1].W.array() == ftp.grads.heads[1].W.array()).all());
}

TEST_CASE("lwf loss matches an extended-precision oracle") {
    cil::Rng rng(5);
    auto student = random_model(3, 0, {3, 2}, rng);
    auto teacher_model = student;
    teacher_model.heads.pop_back();
    teacher_model.class_offsets.pop_back();
    const auto teacher = cil::snapshot(teacher_model, 0);

    const auto x = random_input(3, rng);
    std::vector<cil::LabeledExample> batch{{x, 3}};
    const auto view = cil::make_batch_view(batch);
    const double lambda = 1.0, tau = 1.0;
    const auto lg = cil::lwf_loss(student, teacher, view, lambda, tau, 0.0);

    // Oracle in long double straight from the loss formula.
    auto logits_of = [&](const cil::ModelState& m, int first, int last) {
        std::vector<long double> z;
        for (int k = first; k <= last; ++k)
            for (int r = 0; r < m.heads[k].W.rows(); ++r) {
                long double acc = m.heads[k].b[r];
                for (int c = 0; c < m.heads[k].W.cols(); ++c)
                    acc += static_cast<long double>(m.heads[k].W(r, c)) * x[c];
                z.push_back(acc);
            }
        return z;
    };
    auto lsumexp = [](const std::vector<long double>& z) {
        long double m = z[0];
        for (auto v : z) m = std::max(m, v);
        long double s = 0.0L;
        for (auto v : z) s += std::exp(v - m);
        return m + std::log(s);
    };

    const auto z_teacher = logits_of(teacher_model, 0, 0);
    const auto z_old = logits_of(student, 0, 0);
    const auto z_new = logits_of(student, 1, 1);

    const long double lse_t = lsumexp(z_teacher);
    const long double lse_s = lsumexp(z_old);
    long double distill = 0.0L;
    for (std::size_t k = 0; k < z_teacher.size(); ++k) {
        const long double p_t = std::exp(z_teacher[k] - lse_t);
        const long double log_q = z_old[k] - lse_s;
        distill += -p_t * log_q;
    }
    const long double ce = lsumexp(z_new) - z_new[0];  // label 3 is local 0 in head 1
    const long double expect = ce + lambda * distill;
    REQUIRE(lg.loss == Catch::Approx(static_cast<double>(expect)).margin(1e-10));
}

TEST_CASE("lwf gradients pass finite differences at both temperatures") {
    cil::Rng rng(6);
    for (const double tau : {1.0, 2.0}) {
        auto student = random_model(3, 2, {2, 3}, rng);
        auto teacher_model = student;
        teacher_model.heads.pop_back();
        teacher_model.class_offsets.pop_back();
        const auto teacher = cil::snapshot(teacher_model, 0);

        std::vector<cil::LabeledExample> batch;
        for (int i = 0; i < 3; ++i) batch.push_back({random_input(3, rng), 2 + (i % 3)});
        const auto view = cil::make_batch_view(batch);

        const auto lg = cil::lwf_loss(student, teacher, view, 0.7, tau, 0.01);
        const double err = max_relative_error(
            student, [&] { return cil::lwf_loss(student, teacher, view, 0.7, tau, 0.01).loss; },
            flatten(student, lg.grads));
        REQUIRE(err < 1e-4);
    }
}

TEST_CASE("param_reg_loss rejects shape mismatches") {
    cil::Rng rng(31);
    auto model = random_model(3, 0, {2}, rng);
    const auto anchor = cil::snapshot(model, 0);

    cil::ImportanceMap wrong;
    wrong.omega = cil::zeros_like(model);
    wrong.omega.heads[0].W.resize(3, 3);
    wrong.omega.heads[0].W.setZero();
    wrong.head_counts = {1};
    REQUIRE_THROWS_AS(cil::param_reg_loss(model, anchor, wrong, 1.0), cil::DataError);

    cil::ImportanceMap missing_head;
    missing_head.omega.heads.clear();
    REQUIRE_THROWS_AS(cil::param_reg_loss(model, anchor, missing_head, 1.0), cil::DataError);
}

TEST_CASE("importance estimators reject empty data") {
    cil::Rng rng(32);
    auto model = random_model(3, 0, {2}, rng);
    REQUIRE_THROWS_AS(cil::ewc_importance(model, {}), cil::DataError);
    REQUIRE_THROWS_AS(cil::mas_importance(model, {}), cil::DataError);
}

TEST_CASE("ewc importance: zero gradients give zero importance") {
    cil::ModelState model;
    model.feature_dim = 2;
    model.hidden_dim = 0;
    model.heads.push_back({Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(2)});
    model.class_offsets.push_back(0);

    // Zero inputs with uniform predictions: weight gradients vanish, bias
    // gradients do not; use weight blocks as the zero-gradient case.
    cil::FeatureVector zero = cil::FeatureVector::Zero(2);
    const auto imp = cil::ewc_importance(model, {{zero, 0}, {zero, 1}});
    REQUIRE(imp.omega.heads[0].W.norm() == 0.0);
}

TEST_CASE("ewc importance matches the logistic hand value") {
    // One feature, two classes, zero weights: p = 0.5 for either class and
    // d log p(y=1) / dw_1 = (1 - 0.5) * x = 0.5, so omega = 0.25.
    cil::ModelState model;
    model.feature_dim = 1;
    model.hidden_dim = 0;
    model.heads.push_back({Eigen::MatrixXd::Zero(2, 1), Eigen::VectorXd::Zero(2)});
    model.class_offsets.push_back(0);

    cil::FeatureVector x(1);
    x << 1.0;
    const auto imp = cil::ewc_importance(model, {{x, 1}});
    REQUIRE(imp.omega.heads[0].W(1, 0) == Catch::Approx(0.25).margin(1e-12));
    REQUIRE(imp.omega.heads[0].W(0, 0) == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("importance maps are nonnegative on random models") {
    cil::Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        auto model = random_model(3, trial % 2 ? 2 : 0, {2, 2}, rng);
        std::vector<cil::LabeledExample> data;
        for (int i = 0; i < 3; ++i) data.push_back({random_input(3, rng), i % 4});
        const auto ewc = cil::ewc_importance(model, data);
        const auto mas = cil::mas_importance(model, data);
        for (const auto* imp : {&ewc, &mas}) {
            if (model.hidden_dim > 0) REQUIRE(imp->omega.trunk.W.minCoeff() >= 0.0);
            for (const auto& head : imp->omega.heads) {
                REQUIRE(head.W.minCoeff() >= 0.0);
                REQUIRE(head.b.minCoeff() >= 0.0);
            }
        }
    }
}

TEST_CASE("mas importance matches the identity-head chain rule") {
    // Identity head on 2 features, x = (1, 2): z = (1, 2) and
    // d(1/2 ||z||^2)/dW = z x^T = [[1, 2], [2, 4]].
    cil::ModelState model;
    model.feature_dim = 2;
    model.hidden_dim = 0;
    model.heads.push_back({Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2)});
    model.class_offsets.push_back(0);

    cil::FeatureVector x(2);
    x << 1.0, 2.0;
    const auto imp = cil::mas_importance(model, {{x, 0}});
    REQUIRE(imp.omega.heads[0].W(0, 0) == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(imp.omega.heads[0].W(0, 1) == Catch::Approx(2.0).margin(1e-12));
    REQUIRE(imp.omega.heads[0].W(1, 0) == Catch::Approx(2.0).margin(1e-12));
    REQUIRE(imp.omega.heads[0].W(1, 1) == Catch::Approx(4.0).margin(1e-12));
    REQUIRE(imp.omega.heads[0].b[0] == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(imp.omega.heads[0].b[1] == Catch::Approx(2.0).margin(1e-12));

    // Zero model on zero input: all importance zero.
    model.heads[0].W.setZero();
    cil::FeatureVector zero = cil::FeatureVector::Zero(2);
    const auto none = cil::mas_importance(model, {{zero, 0}});
    REQUIRE(none.omega.heads[0].W.norm() == 0.0);
    REQUIRE(none.omega.heads[0].b.norm() == 0.0);
}

TEST_CASE("sample_exemplars counts and reproducibility") {
    std::vector<cil::AuthorSplit> session;
    for (int a = 0; a < 10; ++a) {
        cil::AuthorSplit split;
        split.iid = a;
        split.author_id = "a" + std::to_string(a);
        for (int d = 0; d < 6; ++d) split.texts.push_back("doc " + std::to_string(a) + " " + std::to_string(d));
        session.push_back(split);
    }

    cil::Rng rng(9);
    const auto picks = cil::sample_exemplars(session, 2, rng);
    REQUIRE(picks.size() == 20);

    cil::Rng rng2(9);
    const auto again = cil::sample_exemplars(session, 2, rng2);
    for (std::size_t i = 0; i < picks.size(); ++i) {
        REQUIRE(picks[i].text == again[i].text);
        REQUIRE(picks[i].iid == again[i].iid);
    }

    // Saturation: k beyond the available documents takes everything once.
    cil::Rng rng3(9);
    const auto all = cil::sample_exemplars({session[0]}, 99, rng3);
    REQUIRE(all.size() == 6);
    std::set<std::string> unique;
    for (const auto& e : all) unique.insert(e.text);
    REQUIRE(unique.size() == 6);
}

TEST_CASE("session 0 is plain supervised training for all kinds") {
    Fixture fx;
    std::string reference;
    for (const char* name : {"FT", "FT+", "FZ", "FZ+", "LWF", "EWC", "MAS", "FT_E2", "LWF_E2"}) {
        auto model = fresh_model(fx, 2);
        cil::StrategyState state;
        cil::train_session(model, cil::parse_strategy(name), state, fx.data.sessions[0].train, fx.tcfg,
                           fx.fcfg);
        const auto bytes = model_bytes(model, fx.fcfg);
        if (reference.empty())
            reference = bytes;
        else
            REQUIRE(bytes == reference);
    }
}

TEST_CASE("epochs=0 changes the model only by add_head") {
    Fixture fx;
    auto model = fresh_model(fx, 2);
    auto expect = model;

    cil::TrainConfig tcfg = fx.tcfg;
    tcfg.epochs = 0;
    cil::StrategyState state;
    cil::train_session(model, cil::parse_strategy("FT"), state, fx.data.sessions[0].train, tcfg, fx.fcfg);

    cil::Rng head_rng = cil::derived_rng(tcfg.seed, "head-init", 0);
    cil::add_head(expect, static_cast<int>(fx.data.sessions[0].train.size()), head_rng);
    REQUIRE(model_bytes(model, fx.fcfg) == model_bytes(expect, fx.fcfg));
}

TEST_CASE("training is deterministic under a fixed seed") {
    Fixture fx;
    const auto a = run_all_sessions(fx, cil::parse_strategy("FT"), 2);
    const auto b = run_all_sessions(fx, cil::parse_strategy("FT"), 2);
    REQUIRE(model_bytes(a, fx.fcfg) == model_bytes(b, fx.fcfg));
}

TEST_CASE("ft+ leaves old head parameters bit-identical") {
    Fixture fx;
    auto model = fresh_model(fx, 2);
    cil::StrategyState state;
    const auto strategy = cil::parse_strategy("FT+");
    cil::train_session(model, strategy, state, fx.data.sessions[0].train, fx.tcfg, fx.fcfg);
    const Eigen::MatrixXd head0 = model.heads[0].W;
    const Eigen::VectorXd bias0 = model.heads[0].b;
    cil::train_session(model, strategy, state, fx.data.sessions[1].train, fx.tcfg, fx.fcfg);
    REQUIRE((model.heads[0].W.array() == head0.array()).all());
    REQUIRE((model.heads[0].b.array() == bias0.array()).all());
}

TEST_CASE("freeze strategies never touch the trunk after session 0") {
    Fixture fx(3, 6);
    for (const char* name : {"FZ", "FZ+"}) {
        auto model = fresh_model(fx, 2);
        cil::StrategyState state;
        const auto strategy = cil::parse_strategy(name);
        cil::train_session(model, strategy, state, fx.data.sessions[0].train, fx.tcfg, fx.fcfg);
        const Eigen::MatrixXd trunk = model.trunk.W;
        const Eigen::VectorXd trunk_b = model.trunk.b;
        for (std::size_t t = 1; t < fx.data.sessions.size(); ++t) {
            cil::train_session(model, strategy, state, fx.data.sessions[t].train, fx.tcfg, fx.fcfg);
            REQUIRE((model.trunk.W.array() == trunk.array()).all());
            REQUIRE((model.trunk.b.array() == trunk_b.array()).all());
        }
    }
}

TEST_CASE("with no trunk fz+ degenerates to ft+") {
    Fixture fx;
    const auto a = run_all_sessions(fx, cil::parse_strategy("FZ+"), 0);
    const auto b = run_all_sessions(fx, cil::parse_strategy("FT+"), 0);
    REQUIRE(model_bytes(a, fx.fcfg) == model_bytes(b, fx.fcfg));
}

TEST_CASE("fz on the initial session equals ft") {
    Fixture fx;
    auto ft_model = fresh_model(fx, 2);
    auto fz_model = fresh_model(fx, 2);
    cil::StrategyState s1, s2;
    cil::train_session(ft_model, cil::parse_strategy("FT"), s1, fx.data.sessions[0].train, fx.tcfg, fx.fcfg);
    cil::train_session(fz_model, cil::parse_strategy("FZ"), s2, fx.data.sessions[0].train, fx.tcfg, fx.fcfg);
    REQUIRE(model_bytes(ft_model, fx.fcfg) == model_bytes(fz_model, fx.fcfg));
}

TEST_CASE("lwf teacher snapshot is untouched by student updates") {
    Fixture fx;
    auto model = fresh_model(fx, 2);
    cil::StrategyState state;
    const auto strategy = cil::parse_strategy("LWF");
    cil::train_session(model, strategy, state, fx.data.sessions[0].train, fx.tcfg, fx.fcfg);
    REQUIRE(state.previous.has_value());
    const auto teacher_bytes = model_bytes(state.previous->model, fx.fcfg);
    cil::train_session(model, strategy, state, fx.data.sessions[1].train, fx.tcfg, fx.fcfg);
    // state.previous now snapshots session 1; the point is the session-0
    // teacher used during training was never mutated in place.
    REQUIRE(model_bytes(state.previous->model, fx.fcfg) != teacher_bytes);
    REQUIRE(state.previous->session == 1);
}

TEST_CASE("missing strategy state on a non-initial session is an error") {
    Fixture fx;
    auto model = fresh_model(fx, 2);
    cil::StrategyState state;
    cil::train_session(model, cil::parse_strategy("FT"), state, fx.data.sessions[0].train, fx.tcfg, fx.fcfg);

    // Forge LWF state without a snapshot.
    cil::StrategyState broken;
    broken.sessions_trained = 1;
    REQUIRE_THROWS_WITH(cil::train_session(model, cil::parse_strategy("LWF"), broken,
                                           fx.data.sessions[1].train, fx.tcfg, fx.fcfg),
                        Catch::Matchers::ContainsSubstring("missing teacher snapshot"));
}

TEST_CASE("session disjointness is enforced through iid ranges") {
    Fixture fx;
    auto model = fresh_model(fx, 2);
    cil::StrategyState state;
    cil::train_session(model, cil::parse_strategy("FT"), state, fx.data.sessions[0].train, fx.tcfg, fx.fcfg);
    REQUIRE_THROWS_WITH(cil::train_session(model, cil::parse_strategy("FT"), state,
                                           fx.data.sessions[0].train, fx.tcfg, fx.fcfg),
                        Catch::Matchers::ContainsSubstring("author-disjoint"));
}

TEST_CASE("exemplar store grows by min(k, n) per author per session") {
    Fixture fx(3, 6);
    cil::StrategyState state;
    auto model = fresh_model(fx, 2);
    auto strategy = cil::parse_strategy("FT_E2");
    for (std::size_t t = 0; t < fx.data.sessions.size(); ++t) {
        cil::train_session(model, strategy, state, fx.data.sessions[t].train, fx.tcfg, fx.fcfg);
        std::size_t authors_seen = 0;
        for (std::size_t s = 0; s <= t; ++s) authors_seen += fx.data.sessions[s].train.size();
        REQUIRE(state.exemplars.size() == 2 * authors_seen);
    }
    for (const auto& [iid, count] : state.exemplars.per_author_counts()) REQUIRE(count == 2);
}

TEST_CASE("ewc and mas accumulate importance across sessions") {
    Fixture fx(3, 6);
    for (const char* name : {"EWC", "MAS"}) {
        cil::StrategyState state;
        auto model = fresh_model(fx, 2);
        const auto strategy = cil::parse_strategy(name);
        for (const auto& session : fx.data.sessions)
            cil::train_session(model, strategy, state, session.train, fx.tcfg, fx.fcfg);
        REQUIRE(state.importance.has_value());
        REQUIRE(state.importance->omega.heads.size() == 3);
        REQUIRE(state.importance->trunk_count > 0);
        REQUIRE(state.importance->omega.trunk.W.minCoeff() >= 0.0);
        for (const auto& head : state.importance->omega.heads) REQUIRE(head.W.minCoeff() >= 0.0);
    }
}

TEST_CASE("ft cumulative accuracy decays monotonically past session 0") {
    // Forgetting makes acc[t] non-increasing beyond the initial session; the
    // property is statistical, required in at least 4 of 5 seeded runs.
    int hits = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        cil::SynthConfig synth;
        synth.authors = 12;
        synth.docs_per_author = 20;
        synth.tokens_per_doc = 20;
        synth.seed = 77;
        cil::SessionSpec spec;
        spec.ratios = {0.25, 0.25, 0.25, 0.25};
        spec.seed = seed;
        const auto data = cil::build_cil_data(cil::synth_author_corpus(synth), spec);

        cil::FeaturizerConfig fcfg;
        fcfg.dim = 1 << 10;
        cil::TrainConfig tcfg;
        tcfg.epochs = 3;
        tcfg.batch_size = 16;
        tcfg.learning_rate = 0.5;
        tcfg.seed = seed;

        cil::Rng trunk_rng = cil::derived_rng(tcfg.seed, "trunk-init");
        auto model = cil::init_model(fcfg.total_dim(), 16, trunk_rng);
        cil::StrategyState state;
        std::vector<double> acc;
        for (std::size_t t = 0; t < data.sessions.size(); ++t) {
            cil::train_session(model, cil::parse_strategy("FT"), state, data.sessions[t].train, tcfg, fcfg);
            acc.push_back(cil::evaluate(model, fcfg, data, t).accuracy);
        }
        bool monotone = true;
        for (std::size_t t = 2; t < acc.size(); ++t)
            if (acc[t] > acc[t - 1]) monotone = false;
        if (monotone) ++hits;
    }
    REQUIRE(hits >= 4);
}

TEST_CASE("strategy state round-trips through json") {
    Fixture fx;
    cil::StrategyState state;
    auto model = fresh_model(fx, 2);
    const auto strategy = cil::parse_strategy("LWF_E2");
    for (const auto& session : fx.data.sessions)
        cil::train_session(model, strategy, state, session.train, fx.tcfg, fx.fcfg);

    const auto doc = cil::strategy_state_to_json(state);
    const auto back = cil::strategy_state_from_json(doc);
    REQUIRE(cil::strategy_state_to_json(back) == doc);
    REQUIRE(back.sessions_trained == state.sessions_trained);
    REQUIRE(back.exemplars.size() == state.exemplars.size());
    REQUIRE(back.previous.has_value());
}
