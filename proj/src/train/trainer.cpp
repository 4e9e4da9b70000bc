#include "fusionvae/train/trainer.hpp"

#include <fstream>
#include <limits>
#include <stdexcept>

#include "fusionvae/model/checkpoint.hpp"
#include "fusionvae/objective/likelihood.hpp"

namespace fs = std::filesystem;

namespace fv::train {

LiveFusionBatcher::LiveFusionBatcher(std::shared_ptr<data::TargetSource> source,
                                     data::DatasetId id, double noise_sigma, uint64_t seed)
    : source_(std::move(source)), id_(id), noise_sigma_(noise_sigma), rng_(seed) {
    if (!source_ || source_->size() == 0)
        throw std::invalid_argument("batcher needs a non-empty target source");
}

Batch LiveFusionBatcher::next(int batch_size, int num_contexts) {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (num_contexts < 0 || num_contexts > 3)
        throw std::invalid_argument("num_contexts must be in [0,3]");
    std::vector<torch::Tensor> targets;
    std::vector<std::vector<torch::Tensor>> ctx(static_cast<size_t>(num_contexts));
    data::OccluderConfig occ;
    for (int i = 0; i < batch_size; ++i) {
        const auto index = static_cast<size_t>(
            rng_.uniform_int(0, static_cast<int>(source_->size()) - 1));
        const uint64_t sample_seed = rng_.next_u64();
        auto s = data::make_sample(*source_, index, id_, sample_seed, mask_, noise_sigma_,
                                   sprites_, occ);
        targets.push_back(s.target);
        for (int k = 0; k < num_contexts; ++k) ctx[static_cast<size_t>(k)].push_back(s.contexts[static_cast<size_t>(k)]);
    }
    Batch b;
    b.targets = torch::stack(targets);
    for (auto& c : ctx) b.contexts.push_back(torch::stack(c));
    return b;
}

torch::nn::Module& AnyModel::module() {
    if (!fv.is_empty()) return *fv;
    if (!cvae.is_empty()) return *cvae;
    if (!fcn.is_empty()) return *fcn;
    throw std::logic_error("empty AnyModel");
}

std::vector<torch::Tensor> AnyModel::parameters() { return module().parameters(); }

AnyModel build_model(const TrainConfig& cfg) {
    AnyModel m;
    m.arch = cfg.arch;
    if (cfg.arch == "fusionvae") {
        m.fv = model::FusionVAE(model_config_for(cfg));
    } else {
        const auto spec = baseline_spec_for(cfg);
        if (spec.kind == baseline::BaselineKind::FCN ||
            spec.kind == baseline::BaselineKind::FCNS) {
            m.fcn = baseline::Fcn(spec);
        } else {
            m.cvae = baseline::Cvae(spec);
        }
    }
    return m;
}

namespace {

struct StepLoss {
    torch::Tensor loss;  // scalar, per-sample scale
    double recon_ll = 0.0;
    std::vector<double> kl;
};

StepLoss compute_loss(AnyModel& m, const Batch& batch, obj::ScheduleState& schedule) {
    const auto n = static_cast<double>(batch.targets.size(0));
    StepLoss out;
    if (!m.fv.is_empty()) {
        auto fwd = m.fv->forward(batch.contexts, batch.targets);
        auto recon = obj::log_likelihood(fwd.params, batch.targets);
        std::vector<torch::Tensor> kls;
        std::vector<int64_t> sizes;
        for (const auto& g : fwd.groups) {
            kls.push_back(obj::gaussian_kl(*g.posterior, g.prior));
            sizes.push_back(g.size);
        }
        auto breakdown = obj::fusionvae_elbo(recon, kls, sizes, schedule);
        for (const auto& kl : kls) out.kl.push_back(kl.item<double>() / n);
        schedule.update_ema(out.kl);
        out.loss = breakdown.total / n;
        out.recon_ll = recon.item<double>() / n;
    } else if (!m.cvae.is_empty()) {
        auto fwd = m.cvae->forward(batch.contexts, batch.targets);
        auto recon = obj::log_likelihood(fwd.params, batch.targets);
        std::vector<torch::Tensor> kls{obj::gaussian_kl(*fwd.posterior, fwd.prior)};
        std::vector<int64_t> sizes{fwd.z.size(1)};
        auto breakdown = obj::fusionvae_elbo(recon, kls, sizes, schedule);
        out.kl.push_back(kls[0].item<double>() / n);
        schedule.update_ema(out.kl);
        out.loss = breakdown.total / n;
        out.recon_ll = recon.item<double>() / n;
    } else {
        auto pred = m.fcn->forward(batch.contexts, static_cast<int>(batch.targets.size(0)));
        out.loss = torch::mse_loss(pred, batch.targets);
    }
    return out;
}

}  // namespace

EpochMetrics train_epoch(AnyModel& m, LiveFusionBatcher& batcher, const TrainConfig& cfg,
                         obj::ScheduleState& schedule, AdaMax& opt, int64_t total_steps,
                         Rng& k_rng, std::ostream* metrics_stream) {
    m.module().train();
    auto params = m.parameters();
    EpochMetrics em;
    em.mean_kl.resize(schedule.kl_ema.size(), 0.0);

    for (int s = 0; s < cfg.steps_per_epoch; ++s) {
        const int K = data::sample_context_count(k_rng);
        auto batch = batcher.next(cfg.batch_size, K);
        opt.set_lr(lr_at(std::min(schedule.step, total_steps), total_steps, cfg));
        opt.zero_grad();
        auto step_loss = compute_loss(m, batch, schedule);
        const double v = step_loss.loss.item<double>();
        if (!std::isfinite(v)) {
            ++em.skipped;
            continue;
        }
        step_loss.loss.backward();
        torch::nn::utils::clip_grad_norm_(params, cfg.grad_clip);
        opt.step();
        ++schedule.step;
        ++em.steps;
        em.mean_total += v;
        em.mean_recon_ll += step_loss.recon_ll;
        for (size_t i = 0; i < step_loss.kl.size() && i < em.mean_kl.size(); ++i)
            em.mean_kl[i] += step_loss.kl[i];
        if (metrics_stream) {
            nlohmann::json line = {{"step", schedule.step},
                                   {"k", K},
                                   {"lr", opt.lr()},
                                   {"beta", schedule.beta()},
                                   {"recon_ll", step_loss.recon_ll},
                                   {"kl", step_loss.kl},
                                   {"total", v}};
            *metrics_stream << line.dump() << "\n";
        }
    }
    if (em.steps > 0) {
        em.mean_total /= em.steps;
        em.mean_recon_ll /= em.steps;
        for (auto& k : em.mean_kl) k /= em.steps;
    }
    if (em.skipped * 100 > cfg.steps_per_epoch) {
        throw std::runtime_error("aborting run: " + std::to_string(em.skipped) + "/" +
                                 std::to_string(cfg.steps_per_epoch) +
                                 " batches skipped with non-finite loss");
    }
    return em;
}

std::shared_ptr<data::TargetSource> open_train_source(const TrainConfig& cfg) {
    return data::open_target_source(dataset_for(cfg), cfg.raw_root,
                                    Rng::derive(cfg.seed, 0xDA7A),
                                    static_cast<size_t>(cfg.train_size));
}

std::shared_ptr<data::TargetSource> open_eval_source(const TrainConfig& cfg) {
    return data::open_target_source(dataset_for(cfg), cfg.raw_root,
                                    Rng::derive(cfg.seed, 0xE7A1),
                                    static_cast<size_t>(std::max(cfg.eval_size, 1)));
}

eval::EvalReport evaluate_model(AnyModel& m, const TrainConfig& cfg, uint64_t eval_seed) {
    torch::NoGradGuard ng;
    m.module().eval();
    auto source = open_eval_source(cfg);
    const auto id = dataset_for(cfg);
    data::EllipseMaskConfig mask;
    data::SpriteSet sprites;
    data::OccluderConfig occ;

    eval::EvalReport r;
    r.arch = cfg.arch;
    r.dataset = cfg.dataset;
    r.config_hash = config_hash(cfg);
    r.has_nll = !m.is_fcn();
    r.n_importance_samples = cfg.importance_samples;
    r.n_mse_samples = cfg.mse_samples;
    r.n_runs = 1;
    r.nll_per_k.fill(0.0);
    r.mse_per_k.fill(0.0);

    torch::manual_seed(eval_seed);
    for (int i = 0; i < cfg.eval_size; ++i) {
        auto sample =
            data::make_sample(*source, static_cast<size_t>(i) % source->size(), id,
                              Rng::derive(eval_seed, static_cast<uint64_t>(i)), mask,
                              cfg.noise_sigma, sprites, occ);
        for (int k = 0; k < 4; ++k) {
            if (r.has_nll) {
                const double nll = !m.fv.is_empty()
                                       ? eval::nll_bpd(m.fv, sample, k, cfg.importance_samples)
                                       : eval::nll_bpd(m.cvae, sample, k,
                                                       cfg.importance_samples);
                r.nll_per_k[static_cast<size_t>(k)] += nll / cfg.eval_size;
            }
            double mse = 0.0;
            if (!m.fv.is_empty())
                mse = eval::mse_min(m.fv, sample, k, cfg.mse_samples);
            else if (!m.cvae.is_empty())
                mse = eval::mse_min(m.cvae, sample, k, cfg.mse_samples);
            else
                mse = eval::mse_min(m.fcn, sample, k, cfg.mse_samples);
            r.mse_per_k[static_cast<size_t>(k)] += mse / cfg.eval_size;
        }
    }
    return r;
}

ExperimentResult run_experiment(const TrainConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);
    {
        std::ofstream f(out_dir / "config.json");
        f << cfg.to_json().dump(2) << "\n";
    }
    auto train_src = open_train_source(cfg);
    const auto id = dataset_for(cfg);
    const int64_t total_steps =
        static_cast<int64_t>(cfg.epochs) * static_cast<int64_t>(cfg.steps_per_epoch);
    const uint64_t eval_seed = Rng::derive(cfg.seed, 0xEA11);

    ExperimentResult result;
    for (int run = 0; run < cfg.runs; ++run) {
        const fs::path run_dir = out_dir / ("run" + std::to_string(run));
        try {
            fs::create_directories(run_dir);
            const uint64_t run_seed = Rng::derive(cfg.seed, static_cast<uint64_t>(run) + 1);
            torch::manual_seed(run_seed);
            auto m = build_model(cfg);
            AdaMax opt(m.parameters(), cfg.lr_start);
            LiveFusionBatcher batcher(train_src, id, cfg.noise_sigma,
                                      Rng::derive(run_seed, 0xBA7C));
            Rng k_rng(Rng::derive(run_seed, 0xC0DE));

            obj::ScheduleState schedule;
            schedule.warmup_steps = std::max<int64_t>(
                1, static_cast<int64_t>(cfg.warmup_frac * static_cast<double>(total_steps)));
            size_t n_groups = 0;
            if (!m.fv.is_empty())
                n_groups = m.fv->group_sizes().size();
            else if (!m.cvae.is_empty())
                n_groups = 1;
            schedule.kl_ema.assign(n_groups, 0.0);

            std::ofstream metrics(run_dir / "metrics.jsonl");
            for (int e = 0; e < cfg.epochs; ++e)
                train_epoch(m, batcher, cfg, schedule, opt, total_steps, k_rng, &metrics);

            const fs::path ckpt = run_dir / "model.ckpt";
            model::CheckpointMeta meta;
            meta.kind = cfg.arch;
            meta.config = {{"train", cfg.to_json()}};
            if (!m.fv.is_empty()) meta.config["model"] = m.fv->config().to_json();
            else meta.config["model"] = baseline_spec_for(cfg).to_json();
            meta.step = schedule.step;
            meta.seed = run_seed;
            model::save_checkpoint(ckpt, m.module(), meta);

            auto report = evaluate_model(m, cfg, eval_seed);
            {
                std::ofstream f(run_dir / "report.json");
                f << report.to_json().dump(2) << "\n";
            }
            result.reports.push_back(report);
            result.checkpoints.push_back(ckpt);
        } catch (const std::exception& e) {
            ++result.failed_runs;
            std::ofstream f(run_dir / "FAILED.txt");
            f << e.what() << "\n";
        }
    }
    if (result.reports.empty()) throw std::runtime_error("every run failed");
    result.aggregate = eval::aggregate_runs(result.reports);
    {
        std::ofstream f(out_dir / "aggregate_mean.json");
        f << result.aggregate.mean.to_json().dump(2) << "\n";
    }
    {
        std::ofstream f(out_dir / "aggregate_best.json");
        f << result.aggregate.best.to_json().dump(2) << "\n";
    }
    return result;
}

}  // namespace fv::train
