#include "fv_doctest.h"

#include <filesystem>

#include "fusionvae/model/checkpoint.hpp"
#include "fusionvae/model/fusion_vae.hpp"
#include "fusionvae/objective/loss.hpp"

using namespace fv;
namespace fs = std::filesystem;

namespace {

model::ModelConfig tiny_config(model::AggMode mode = model::AggMode::MaxAggAdd,
                               model::PosteriorVariant post = model::PosteriorVariant::QY) {
    model::ModelConfig cfg;
    cfg.image_channels = 1;
    cfg.image_size = 16;
    cfg.hierarchy.scales = {{2, 4}, {1, 8}};
    cfg.hierarchy.latent_channels = 2;
    cfg.hierarchy.base_width = 4;
    cfg.likelihood = obj::LikelihoodKind::Bernoulli;
    cfg.agg_mode = mode;
    cfg.posterior = post;
    return cfg;
}

std::vector<torch::Tensor> contexts(int k, int n = 2, int size = 16) {
    std::vector<torch::Tensor> out;
    for (int i = 0; i < k; ++i) out.push_back(torch::rand({n, 1, size, size}));
    return out;
}

double max_abs(const torch::Tensor& t) { return t.abs().max().item<double>(); }

}  // namespace

TEST_CASE("config serialization round-trips") {
    auto cfg = tiny_config(model::AggMode::BayAggAll, model::PosteriorVariant::QXY);
    auto back = model::ModelConfig::from_json(cfg.to_json());
    CHECK(back.agg_mode == cfg.agg_mode);
    CHECK(back.posterior == cfg.posterior);
    CHECK(back.hierarchy.scales.size() == 2);
    CHECK(back.hierarchy.latent_channels == 2);
    CHECK(back.image_size == 16);
}

TEST_CASE("agg mode and posterior names round-trip") {
    for (auto m : {model::AggMode::MaxAggAdd, model::AggMode::MeanAggAdd,
                   model::AggMode::BayAggAdd, model::AggMode::MaxAggAll,
                   model::AggMode::MeanAggAll, model::AggMode::BayAggAll})
        CHECK(model::agg_mode_from_string(model::to_string(m)) == m);
    CHECK(model::posterior_from_string("q(y)") == model::PosteriorVariant::QY);
    CHECK(model::posterior_from_string("q(x,y)") == model::PosteriorVariant::QXY);
    CHECK_THROWS(model::agg_mode_from_string("bogus"));
}

TEST_CASE("hierarchy validation rejects non-doubling scales") {
    model::HierarchySpec h;
    h.scales = {{2, 4}, {1, 12}};
    CHECK_THROWS(h.validate());
    h.scales = {{2, 8}, {1, 4}};  // wrong order
    CHECK_THROWS(h.validate());
}

TEST_CASE("forward output shapes and group sizes") {
    torch::manual_seed(0);
    model::FusionVAE m(tiny_config());
    m->eval();
    auto y = torch::rand({3, 1, 16, 16});
    auto fwd = m->forward(contexts(2, 3), y);
    CHECK(fwd.params.raw.sizes() == torch::IntArrayRef({3, 1, 16, 16}));
    REQUIRE(fwd.groups.size() == 3);
    CHECK(fwd.groups[0].z.sizes() == torch::IntArrayRef({3, 2, 4, 4}));
    CHECK(fwd.groups[2].z.sizes() == torch::IntArrayRef({3, 2, 8, 8}));
    CHECK(m->group_sizes() == std::vector<int64_t>{32, 32, 128});
    for (const auto& g : fwd.groups) {
        CHECK(g.posterior.has_value());
        CHECK((g.prior.var > 0).all().item<bool>());
    }
}

TEST_CASE("input validation") {
    torch::manual_seed(0);
    model::FusionVAE m(tiny_config());
    m->eval();
    auto y = torch::rand({1, 1, 16, 16});
    CHECK_THROWS(m->forward(contexts(4, 1), y));           // too many contexts
    CHECK_THROWS(m->forward({torch::rand({1, 1, 8, 8})}, y));  // wrong size
    CHECK_THROWS(m->forward_prior({}, -1));                // no batch hint
    CHECK_NOTHROW(m->forward_prior({}, 2));
}

TEST_CASE("empty context set yields a standard normal first prior") {
    torch::manual_seed(1);
    for (auto mode : {model::AggMode::MaxAggAdd, model::AggMode::BayAggAll}) {
        model::FusionVAE m(tiny_config(mode));
        m->eval();
        auto fwd = m->forward_prior({}, 2, 0.0);
        CHECK(max_abs(fwd.groups[0].prior.mu) == 0.0);
        CHECK(max_abs(fwd.groups[0].prior.var - 1.0) == 0.0);
    }
}

TEST_CASE("all six fusion modes are permutation invariant") {
    const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    for (auto mode : {model::AggMode::MaxAggAdd, model::AggMode::MeanAggAdd,
                      model::AggMode::BayAggAdd, model::AggMode::MaxAggAll,
                      model::AggMode::MeanAggAll, model::AggMode::BayAggAll}) {
        torch::manual_seed(7);
        model::FusionVAE m(tiny_config(mode));
        m->eval();
        torch::manual_seed(8);
        auto xs = contexts(3, 2);
        torch::NoGradGuard ng;
        auto ref = m->forward_prior(xs, 2, 0.0);
        for (const auto& p : perms) {
            auto fwd = m->forward_prior({xs[static_cast<size_t>(p[0])],
                                         xs[static_cast<size_t>(p[1])],
                                         xs[static_cast<size_t>(p[2])]},
                                        2, 0.0);
            for (size_t l = 0; l < ref.groups.size(); ++l) {
                CHECK(max_abs(fwd.groups[l].prior.mu - ref.groups[l].prior.mu) < 1e-6);
                CHECK(max_abs(fwd.groups[l].prior.var - ref.groups[l].prior.var) < 1e-6);
            }
            CHECK(max_abs(fwd.params.raw - ref.params.raw) < 1e-5);
        }
    }
}

TEST_CASE("q(y) posterior ignores the context set") {
    torch::manual_seed(2);
    model::FusionVAE m(tiny_config(model::AggMode::MaxAggAdd, model::PosteriorVariant::QY));
    m->eval();
    torch::NoGradGuard ng;
    auto y = torch::rand({2, 1, 16, 16});
    auto ctx = contexts(3, 2);
    torch::manual_seed(3);
    auto a = m->forward(ctx, y);
    torch::manual_seed(3);
    auto b = m->forward({}, y);
    for (size_t l = 0; l < a.groups.size(); ++l) {
        CHECK(max_abs(a.groups[l].posterior->mu - b.groups[l].posterior->mu) < 1e-6);
        CHECK(max_abs(a.groups[l].posterior->var - b.groups[l].posterior->var) < 1e-6);
    }
}

TEST_CASE("q(x,y) posterior reacts to the context set but tolerates K=0") {
    torch::manual_seed(4);
    model::FusionVAE m(tiny_config(model::AggMode::MaxAggAdd, model::PosteriorVariant::QXY));
    m->eval();
    torch::NoGradGuard ng;
    auto y = torch::rand({2, 1, 16, 16});
    auto ctx = contexts(3, 2);
    torch::manual_seed(5);
    auto a = m->forward(ctx, y);
    torch::manual_seed(5);
    auto b = m->forward({}, y);
    CHECK(max_abs(a.groups[0].posterior->mu - b.groups[0].posterior->mu) > 1e-6);
    CHECK(b.params.raw.isfinite().all().item<bool>());
}

TEST_CASE("prior sampling at temperature zero is deterministic") {
    torch::manual_seed(6);
    model::FusionVAE m(tiny_config());
    m->eval();
    torch::NoGradGuard ng;
    torch::manual_seed(10);
    auto xs = contexts(2, 1);
    auto a = m->forward_prior(xs, 1, 0.0);
    auto b = m->forward_prior(xs, 1, 0.0);
    CHECK(max_abs(a.params.raw - b.params.raw) == 0.0);
}

TEST_CASE("the generator seed tensor receives gradient") {
    torch::manual_seed(9);
    model::FusionVAE m(tiny_config());
    m->train();
    auto y = torch::rand({2, 1, 16, 16});
    auto fwd = m->forward(contexts(1, 2), y);
    auto recon = obj::log_likelihood(fwd.params, y);
    std::vector<torch::Tensor> kls;
    std::vector<int64_t> sizes;
    for (const auto& g : fwd.groups) {
        kls.push_back(obj::gaussian_kl(*g.posterior, g.prior));
        sizes.push_back(g.size);
    }
    obj::ScheduleState sched;
    sched.step = 100;
    sched.warmup_steps = 10;
    auto loss = obj::fusionvae_elbo(recon, kls, sizes, sched).total;
    loss.backward();
    auto h = m->named_parameters()["h"];
    REQUIRE(h.grad().defined());
    CHECK(h.grad().abs().sum().item<double>() > 0.0);
}

TEST_CASE("residual cells are identity maps at initialization") {
    torch::manual_seed(11);
    model::EncoderCell ec(6);
    model::DecoderCell dc(6);
    ec->eval();
    dc->eval();
    auto x = torch::randn({2, 6, 8, 8});
    CHECK(max_abs(ec->forward(x) - x) < 1e-5);
    CHECK(max_abs(dc->forward(x) - x) < 1e-5);
}

TEST_CASE("squeeze-excite gate is spatially uniform") {
    torch::manual_seed(12);
    model::SqueezeExcite se(8);
    se->eval();
    auto x = torch::rand({2, 8, 5, 5}) + 0.5;
    auto gated = se->forward(x);
    auto ratio = gated / x;  // per-(n,c) constant if the gate is global
    auto spread = (ratio.amax({2, 3}) - ratio.amin({2, 3})).abs().max().item<double>();
    CHECK(spread < 1e-6);
}

TEST_CASE("generate() decodes a fixed latent assignment deterministically") {
    torch::manual_seed(13);
    model::FusionVAE m(tiny_config());
    m->eval();
    torch::NoGradGuard ng;
    std::vector<torch::Tensor> zs{torch::randn({1, 2, 4, 4}), torch::randn({1, 2, 4, 4}),
                                  torch::randn({1, 2, 8, 8})};
    auto a = m->generate(zs, {}, 1);
    auto b = m->generate(zs, {}, 1);
    CHECK(max_abs(a.raw - b.raw) == 0.0);
    CHECK_THROWS(m->generate({zs[0]}, {}, 1));
}

TEST_CASE("checkpoint round-trip restores the exact function") {
    const fs::path path = fs::temp_directory_path() / "fv_model_test.ckpt";
    torch::manual_seed(14);
    auto cfg = tiny_config();
    model::FusionVAE a(cfg);
    a->eval();
    model::CheckpointMeta meta;
    meta.kind = "fusionvae";
    meta.config = {{"model", cfg.to_json()}};
    meta.step = 42;
    meta.seed = 7;
    model::save_checkpoint(path, *a, meta);

    auto read = model::read_checkpoint_meta(path);
    CHECK(read.kind == "fusionvae");
    CHECK(read.step == 42);
    CHECK(read.seed == 7);

    torch::manual_seed(99);
    model::FusionVAE b(cfg);
    b->eval();
    model::load_checkpoint_into(path, *b);
    torch::NoGradGuard ng;
    torch::manual_seed(15);
    auto xs = contexts(2, 1);
    auto out_a = a->forward_prior(xs, 1, 0.0);
    auto out_b = b->forward_prior(xs, 1, 0.0);
    CHECK(max_abs(out_a.params.raw - out_b.params.raw) == 0.0);
    fs::remove(path);
}
