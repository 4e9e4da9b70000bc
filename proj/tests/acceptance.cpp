// Acceptance gate: one pass/fail line per criterion, nonzero exit on
// any failure. Criterion 7 trains real desk-scale models and dominates
// the runtime.
#include <torch/torch.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "fusionvae/agg/aggregation.hpp"
#include "fusionvae/core/rng.hpp"
#include "fusionvae/data/manifest.hpp"
#include "fusionvae/eval/metrics.hpp"
#include "fusionvae/model/checkpoint.hpp"
#include "fusionvae/model/fusion_vae.hpp"
#include "fusionvae/objective/likelihood.hpp"
#include "fusionvae/objective/loss.hpp"
#include "fusionvae/train/trainer.hpp"

using namespace fv;
namespace fs = std::filesystem;

namespace {

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
    if (!ok) throw Failure(what);
}

torch::Tensor dtensor(double v) { return torch::full({1}, v, torch::kDouble); }

// --- 1. Bayesian aggregation: iterative vs closed form -------------------

void criterion_agg_equivalence() {
    Rng rng(101);
    const auto opts = torch::TensorOptions().dtype(torch::kDouble);
    for (int trial = 0; trial < 1000; ++trial) {
        const int K = 1 + rng.uniform_int(0, 4);
        const int64_t c = 1 + rng.uniform_int(0, 3);
        const int64_t h = 1 + rng.uniform_int(0, 3);
        const int64_t w = 1 + rng.uniform_int(0, 3);
        auto rand_gauss = [&]() {
            auto mu = torch::empty({1, c, h, w}, opts);
            auto var = torch::empty({1, c, h, w}, opts);
            auto ma = mu.accessor<double, 4>();
            auto va = var.accessor<double, 4>();
            for (int64_t i = 0; i < c; ++i)
                for (int64_t j = 0; j < h; ++j)
                    for (int64_t k = 0; k < w; ++k) {
                        ma[0][i][j][k] = rng.normal() * 3.0;
                        va[0][i][j][k] = std::exp(rng.uniform() * 6.0 - 3.0);
                    }
            return agg::GaussianFeature(mu, var);
        };
        auto prior = rand_gauss();
        std::vector<agg::GaussianFeature> obs;
        for (int k = 0; k < K; ++k) obs.push_back(rand_gauss());
        auto a = agg::bayes_agg_iter(prior, obs);
        auto b = agg::bayes_agg_closed(prior, obs);
        const double dmu = (a.mu - b.mu).abs().max().item<double>();
        const double dvar = (a.var - b.var).abs().max().item<double>();
        require(dmu < 1e-6 && dvar < 1e-6,
                "routes disagree at trial " + std::to_string(trial));
    }
}

// --- 2. Context permutation invariance across all fusion modes -----------

void criterion_permutation_invariance() {
    model::ModelConfig cfg;
    cfg.image_channels = 1;
    cfg.image_size = 16;
    cfg.hierarchy.scales = {{2, 4}, {1, 8}};
    cfg.hierarchy.latent_channels = 2;
    cfg.hierarchy.base_width = 4;

    const std::vector<std::vector<int>> perms = {
        {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    const std::array<model::AggMode, 6> modes = {
        model::AggMode::MaxAggAdd,  model::AggMode::MeanAggAdd, model::AggMode::BayAggAdd,
        model::AggMode::MaxAggAll,  model::AggMode::MeanAggAll, model::AggMode::BayAggAll};

    for (int seed = 0; seed < 50; ++seed) {
        torch::manual_seed(1000 + seed);
        std::vector<torch::Tensor> ctx;
        for (int i = 0; i < 3; ++i) ctx.push_back(torch::rand({1, 1, 16, 16}));
        for (auto mode : modes) {
            cfg.agg_mode = mode;
            torch::manual_seed(2000 + seed);
            model::FusionVAE m(cfg);
            m->eval();
            torch::NoGradGuard ng;
            auto ref = m->forward_prior(ctx, 1, 0.0);
            for (const auto& perm : perms) {
                std::vector<torch::Tensor> shuffled;
                for (int p : perm) shuffled.push_back(ctx[static_cast<size_t>(p)]);
                auto out = m->forward_prior(shuffled, 1, 0.0);
                for (size_t g = 0; g < ref.groups.size(); ++g) {
                    const double dmu = (out.groups[g].prior.mu - ref.groups[g].prior.mu)
                                           .abs().max().item<double>();
                    const double dvar = (out.groups[g].prior.var - ref.groups[g].prior.var)
                                            .abs().max().item<double>();
                    require(dmu <= 1e-6 && dvar <= 1e-6,
                            "mode " + model::to_string(mode) + " seed " +
                                std::to_string(seed) + " group " + std::to_string(g));
                }
            }
        }
    }
}

// --- 3. Analytic gradients vs central finite differences -----------------

void criterion_gradient_check() {
    model::ModelConfig cfg;
    cfg.image_channels = 1;
    cfg.image_size = 16;
    cfg.hierarchy.scales = {{1, 4}, {1, 8}};
    cfg.hierarchy.latent_channels = 1;
    cfg.hierarchy.base_width = 2;
    cfg.posterior = model::PosteriorVariant::QXY;

    torch::manual_seed(7);
    model::FusionVAE m(cfg);
    m->to(torch::kDouble);
    m->eval();  // frozen batch-norm statistics keep the loss a clean function

    torch::manual_seed(8);
    std::vector<torch::Tensor> ctx = {torch::rand({1, 1, 16, 16}, torch::kDouble)};
    auto y = torch::rand({1, 1, 16, 16}, torch::kDouble);

    obj::ScheduleState sched;
    sched.step = sched.warmup_steps = 1;  // beta = 1
    sched.alpha_mode = obj::AlphaMode::Uniform;

    const uint64_t fwd_seed = 99;  // fixes the reparameterization noise
    auto loss_value = [&]() {
        torch::manual_seed(fwd_seed);
        auto fwd = m->forward(ctx, y);
        auto recon = obj::log_likelihood(fwd.params, y);
        std::vector<torch::Tensor> kls;
        std::vector<int64_t> sizes;
        for (const auto& g : fwd.groups) {
            kls.push_back(obj::gaussian_kl(*g.posterior, g.prior));
            sizes.push_back(g.size);
        }
        return obj::fusionvae_elbo(recon, kls, sizes, sched).total;
    };

    auto params = m->parameters();
    auto loss = loss_value();
    loss.backward();
    std::vector<torch::Tensor> grads;
    for (auto& p : params)
        grads.push_back(p.grad().defined() ? p.grad().detach().clone()
                                           : torch::zeros_like(p));

    int64_t total = 0;
    for (const auto& p : params) total += p.numel();
    const int64_t budget = 200;
    const int64_t per_tensor =
        std::max<int64_t>(1, budget / static_cast<int64_t>(params.size()));

    const double h = 1e-3;
    int64_t checked = 0;
    double worst = 0.0;
    torch::NoGradGuard ng;
    for (size_t pi = 0; pi < params.size() && checked < budget; ++pi) {
        auto flat = params[pi].view(-1);
        auto gflat = grads[pi].view(-1);
        const int64_t n = flat.numel();
        const int64_t take = std::min<int64_t>(per_tensor, n);
        for (int64_t t = 0; t < take && checked < budget; ++t) {
            const int64_t i = t * n / take;
            const double orig = flat[i].item<double>();
            flat[i] = orig + h;
            double fp, fm;
            {
                torch::AutoGradMode en(true);
                fp = loss_value().item<double>();
            }
            flat[i] = orig - h;
            {
                torch::AutoGradMode en(true);
                fm = loss_value().item<double>();
            }
            flat[i] = orig;
            const double g_fd = (fp - fm) / (2 * h);
            const double g_an = gflat[i].item<double>();
            const double rel = std::abs(g_fd - g_an) /
                               std::max({std::abs(g_fd), std::abs(g_an), 1e-6});
            worst = std::max(worst, rel);
            ++checked;
        }
    }
    require(checked > 0, "no coordinates checked");
    require(worst < 1e-4, "max relative error " + std::to_string(worst));
}

// --- 4. ELBO lower-bounds the conjugate-Gaussian evidence ----------------

void criterion_bound_validity() {
    Rng rng(404);
    for (int trial = 0; trial < 1000; ++trial) {
        const double mu0 = rng.normal() * 2.0;
        const double var0 = std::exp(rng.uniform() * 3.0 - 1.5);
        const double var_eps = std::exp(rng.uniform() * 3.0 - 1.5);
        const double y = mu0 + rng.normal() * std::sqrt(var0 + var_eps);

        agg::GaussianFeature prior(dtensor(mu0), dtensor(var0));
        auto post = agg::bayes_agg_closed(prior, {agg::GaussianFeature(dtensor(y),
                                                                       dtensor(var_eps))});
        const double log_py =
            -0.5 * std::log(2 * std::numbers::pi * (var0 + var_eps)) -
            (y - mu0) * (y - mu0) / (2 * (var0 + var_eps));

        auto elbo_of = [&](double mu_q, double var_q) {
            // E_q[log N(y; z, var_eps)] in closed form
            const double eq = -0.5 * std::log(2 * std::numbers::pi * var_eps) -
                              ((y - mu_q) * (y - mu_q) + var_q) / (2 * var_eps);
            const double kl =
                obj::gaussian_kl(agg::GaussianFeature(dtensor(mu_q), dtensor(var_q)), prior)
                    .item<double>();
            require(kl >= -1e-12, "negative KL");
            return eq - kl;
        };

        // random variational posteriors stay below the evidence
        for (int q = 0; q < 3; ++q) {
            const double mu_q = rng.normal() * 3.0;
            const double var_q = std::exp(rng.uniform() * 4.0 - 2.0);
            require(elbo_of(mu_q, var_q) <= log_py + 1e-9, "bound violated");
        }
        // the exact posterior is tight
        const double tight = elbo_of(post.mu.item<double>(), post.var.item<double>());
        require(std::abs(tight - log_py) < 1e-9, "bound not tight at the posterior");
    }
}

// --- 5. Discretized logistic mixture normalization + uniform BPD ---------

void criterion_likelihood_normalization() {
    const int M = 5, N = 10000;
    torch::manual_seed(55);
    auto logits = torch::randn({N, M, 1, 1}) * 2.0;
    auto means = torch::rand({N, M, 1, 1}) * 2.0 - 1.0;
    auto log_scales = torch::rand({N, M, 1, 1}) * 6.0 - 5.0;
    auto raw = torch::cat({logits, means, log_scales}, 1);

    auto total = torch::zeros({N, 1, 1}, torch::kDouble);
    for (int level = 0; level < 256; ++level) {
        auto y01 = torch::full({N, 1, 1, 1}, level / 255.0);
        auto lp = obj::logistic_mixture_bin_logprob(raw, 1, M, y01);  // [N,H,W]
        total += lp.to(torch::kDouble).exp();
    }
    const double lo = total.min().item<double>();
    const double hi = total.max().item<double>();
    require(std::abs(lo - 1.0) < 1e-5 && std::abs(hi - 1.0) < 1e-5,
            "mass in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");

    // uniform model: -log(1/256) per dimension is exactly 8 bits
    for (int64_t dims : {1, 64 * 64 * 3}) {
        const double nats = static_cast<double>(dims) * -std::log(256.0);
        require(std::abs(eval::bpd_from_nats(nats, dims) - 8.0) < 1e-12,
                "uniform BPD mismatch at dims " + std::to_string(dims));
    }
}

// --- 6. Importance estimator vs an enumerable toy evidence ---------------

void criterion_importance_oracle() {
    const int S = 100, seeds = 200;
    int within = 0;
    for (int seed = 0; seed < seeds; ++seed) {
        Rng rng(static_cast<uint64_t>(6000 + seed));
        const double var_eps = std::exp(rng.uniform() * 2.0 - 1.0);
        const double y = rng.normal() * std::sqrt(1.0 + var_eps);
        const double exact = -0.5 * std::log(2 * std::numbers::pi * (1.0 + var_eps)) -
                             y * y / (2 * (1.0 + var_eps));
        // proposal: mildly perturbed exact posterior
        const double post_var = var_eps / (1.0 + var_eps);
        const double post_mu = y / (1.0 + var_eps);
        const double mu_q = post_mu + 0.2 * rng.normal() * std::sqrt(post_var);
        const double var_q = post_var * std::exp(0.3 * rng.normal());

        auto log_normal = [](double x, double mu, double var) {
            return -0.5 * std::log(2 * std::numbers::pi * var) -
                   (x - mu) * (x - mu) / (2 * var);
        };
        std::vector<double> lw(S);
        for (int s = 0; s < S; ++s) {
            const double z = mu_q + rng.normal() * std::sqrt(var_q);
            lw[static_cast<size_t>(s)] = log_normal(y, z, var_eps) +
                                         log_normal(z, 0.0, 1.0) -
                                         log_normal(z, mu_q, var_q);
        }
        const double est = eval::importance_log_likelihood(lw, S);

        // delta-method standard error of log(mean w)
        const double lmax = *std::max_element(lw.begin(), lw.end());
        double sum = 0.0, sum2 = 0.0;
        for (double l : lw) {
            const double w = std::exp(l - lmax);
            sum += w;
            sum2 += w * w;
        }
        const double mean = sum / S;
        const double sd = std::sqrt(std::max(0.0, sum2 / S - mean * mean));
        const double se = sd / (mean * std::sqrt(static_cast<double>(S)));
        if (std::abs(est - exact) < 3 * se) ++within;
    }
    require(within >= 190, "only " + std::to_string(within) + "/200 inside 3 SE");
}

// --- 7. Desk-scale training trend ----------------------------------------

train::TrainConfig desk_config(const std::string& arch) {
    train::TrainConfig cfg;
    cfg.preset = "fmnist-small";
    cfg.arch = arch;
    cfg.epochs = 2;
    cfg.steps_per_epoch = 150;
    cfg.batch_size = 16;
    cfg.runs = 3;
    cfg.train_size = 2048;
    cfg.eval_size = 32;
    cfg.importance_samples = 32;
    cfg.mse_samples = 16;
    return cfg;
}

void criterion_desk_trend() {
    const fs::path root = fs::temp_directory_path() / "fv_acceptance_trend";
    fs::remove_all(root);
    auto fv_res = train::run_experiment(desk_config("fusionvae"), root / "fusionvae");
    auto fcn_res = train::run_experiment(desk_config("fcn"), root / "fcn");
    require(fv_res.failed_runs == 0 && fcn_res.failed_runs == 0, "runs failed");

    const auto& fvm = fv_res.aggregate.mean;
    const auto& fcm = fcn_res.aggregate.mean;
    std::ostringstream msg;
    msg << "mse_k0=" << fvm.mse_per_k[0] << " mse_k3=" << fvm.mse_per_k[3]
        << " nll_k0=" << fvm.nll_per_k[0] << " nll_k3=" << fvm.nll_per_k[3]
        << " fv_mse=" << fvm.mse_avg() << " fcn_mse=" << fcm.mse_avg();
    require(fvm.mse_per_k[3] < 0.5 * fvm.mse_per_k[0],
            "context benefit ratio too weak: " + msg.str());
    require(fvm.mse_avg() < fcm.mse_avg(), "no advantage over the FCN: " + msg.str());
    require(fvm.nll_per_k[0] > fvm.nll_per_k[3], "NLL not improved by contexts: " + msg.str());
    std::printf("    trend: %s\n", msg.str().c_str());
}

// --- 8. Determinism: datagen and checkpoint round-trips ------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void criterion_determinism() {
    const fs::path a = fs::temp_directory_path() / "fv_acceptance_dg_a";
    const fs::path b = fs::temp_directory_path() / "fv_acceptance_dg_b";
    fs::remove_all(a);
    fs::remove_all(b);
    data::DatagenConfig dg;
    dg.master_seed = 7;
    dg.split = "test";
    dg.limit = 4;
    data::generate_dataset(dg, a);
    data::generate_dataset(dg, b);

    std::vector<fs::path> rel;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), a));
    std::sort(rel.begin(), rel.end());
    require(!rel.empty(), "no files generated");
    for (const auto& r : rel)
        require(slurp(a / r) == slurp(b / r), "file differs: " + r.string());
    fs::remove_all(a);
    fs::remove_all(b);

    // checkpoint save/load reproduces the evaluation report exactly
    train::TrainConfig cfg;
    cfg.preset = "fmnist-small";
    cfg.eval_size = 100;
    cfg.importance_samples = 8;
    cfg.mse_samples = 4;
    torch::manual_seed(88);
    auto m1 = train::build_model(cfg);
    const uint64_t eval_seed = Rng::derive(cfg.seed, 0xEA11);
    auto r1 = train::evaluate_model(m1, cfg, eval_seed);

    const fs::path ckpt = fs::temp_directory_path() / "fv_acceptance.ckpt";
    model::CheckpointMeta meta;
    meta.kind = cfg.arch;
    meta.config = {{"train", cfg.to_json()}};
    model::save_checkpoint(ckpt, m1.module(), meta);

    torch::manual_seed(989898);  // different init before the reload
    auto m2 = train::build_model(cfg);
    model::load_checkpoint_into(ckpt, m2.module());
    auto r2 = train::evaluate_model(m2, cfg, eval_seed);
    for (size_t k = 0; k < 4; ++k) {
        require(r1.nll_per_k[k] == r2.nll_per_k[k], "NLL differs at K=" + std::to_string(k));
        require(r1.mse_per_k[k] == r2.mse_per_k[k], "MSE differs at K=" + std::to_string(k));
    }
    fs::remove(ckpt);
}

// --- 9. mse_min is nonincreasing in the sample budget --------------------

void criterion_mse_monotonic() {
    train::TrainConfig cfg;
    cfg.preset = "fmnist-small";
    cfg.eval_size = 100;
    torch::manual_seed(99);
    auto m = train::build_model(cfg);
    m.module().eval();
    auto source = train::open_eval_source(cfg);
    data::EllipseMaskConfig mask;
    data::SpriteSet sprites;
    data::OccluderConfig occ;
    torch::NoGradGuard ng;
    for (int i = 0; i < 100; ++i) {
        auto s = data::make_sample(*source, static_cast<size_t>(i) % source->size(),
                                   data::DatasetId::FusionMnist,
                                   Rng::derive(91, static_cast<uint64_t>(i)), mask, 0.3,
                                   sprites, occ);
        std::vector<torch::Tensor> ctx(s.contexts.begin(), s.contexts.begin() + 2);
        for (auto& c : ctx) c = c.unsqueeze(0);
        torch::manual_seed(9000 + i);
        auto draws = m.fv->sample(ctx, 32);
        const auto target = s.target.unsqueeze(0);
        std::vector<torch::Tensor> s1(draws.begin(), draws.begin() + 1);
        std::vector<torch::Tensor> s8(draws.begin(), draws.begin() + 8);
        const double m1 = eval::mse_min(s1, target);
        const double m8 = eval::mse_min(s8, target);
        const double m32 = eval::mse_min(draws, target);
        require(m8 <= m1 && m32 <= m8, "not monotone at sample " + std::to_string(i));
    }
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        std::function<void()> fn;
    };
    const std::vector<Criterion> criteria = {
        {"aggregation dual-route equivalence", criterion_agg_equivalence},
        {"prior-fusion permutation invariance", criterion_permutation_invariance},
        {"finite-difference gradient check", criterion_gradient_check},
        {"conjugate-Gaussian bound validity", criterion_bound_validity},
        {"logistic-mixture normalization and uniform BPD", criterion_likelihood_normalization},
        {"importance-sampling estimator oracle", criterion_importance_oracle},
        {"desk-scale training trend", criterion_desk_trend},
        {"datagen and checkpoint determinism", criterion_determinism},
        {"mse_min sample-budget monotonicity", criterion_mse_monotonic},
    };

    torch::set_num_threads(1);
    int failures = 0;
    for (size_t i = 0; i < criteria.size(); ++i) {
        std::string verdict = "PASS", detail;
        try {
            criteria[i].fn();
        } catch (const std::exception& e) {
            verdict = "FAIL";
            detail = std::string(" - ") + e.what();
            ++failures;
        }
        std::printf("[%zu/%zu] %-48s %s%s\n", i + 1, criteria.size(), criteria[i].name,
                    verdict.c_str(), detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
