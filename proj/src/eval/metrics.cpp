#include "fusionvae/eval/metrics.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "fusionvae/data/sources.hpp"
#include "fusionvae/objective/likelihood.hpp"

namespace fv::eval {

double gaussian_log_prob(const torch::Tensor& z, const torch::Tensor& mu,
                         const torch::Tensor& var) {
    auto zd = z.to(torch::kDouble);
    auto mud = mu.to(torch::kDouble);
    auto vard = var.to(torch::kDouble);
    constexpr double kLog2Pi = 1.8378770664093454835606594728112;
    auto terms = -0.5 * (kLog2Pi + torch::log(vard) + (zd - mud).pow(2) / vard);
    return terms.sum().item<double>();
}

torch::Tensor gaussian_log_prob_batched(const torch::Tensor& z, const torch::Tensor& mu,
                                        const torch::Tensor& var) {
    auto zd = z.to(torch::kDouble);
    auto mud = mu.to(torch::kDouble);
    auto vard = var.to(torch::kDouble);
    constexpr double kLog2Pi = 1.8378770664093454835606594728112;
    auto terms = -0.5 * (kLog2Pi + torch::log(vard) + (zd - mud).pow(2) / vard);
    return terms.flatten(1).sum(1);
}

bool ImportanceDraw::finite() const {
    return std::isfinite(log_q) && std::isfinite(log_p_prior) && std::isfinite(log_p_recon);
}

double importance_log_likelihood(const std::function<ImportanceDraw()>& draw, int S,
                                 int* excluded) {
    if (S < 1) throw std::invalid_argument("importance sample count must be >= 1");
    std::vector<double> log_weights;
    int skipped = 0;
    for (int s = 0; s < S; ++s) {
        const auto d = draw();
        if (!d.finite()) {
            ++skipped;
            continue;
        }
        log_weights.push_back(d.log_p_recon + d.log_p_prior - d.log_q);
    }
    if (excluded) *excluded = skipped;
    return importance_log_likelihood(log_weights, S);
}

double importance_log_likelihood(const std::vector<double>& log_weights, int S,
                                 int* excluded) {
    if (S < 1) throw std::invalid_argument("importance sample count must be >= 1");
    std::vector<double> finite;
    finite.reserve(log_weights.size());
    for (double lw : log_weights)
        if (std::isfinite(lw)) finite.push_back(lw);
    if (excluded) *excluded = static_cast<int>(log_weights.size() - finite.size());
    if (finite.empty())
        throw std::runtime_error("all importance draws were non-finite");
    const double m = *std::max_element(finite.begin(), finite.end());
    double acc = 0.0;
    for (double lw : finite) acc += std::exp(lw - m);
    return m + std::log(acc) - std::log(static_cast<double>(S));
}

double bpd_from_nats(double log_likelihood_nats, int64_t dims) {
    return -log_likelihood_nats / (static_cast<double>(dims) * std::numbers::ln2);
}

namespace {

std::vector<torch::Tensor> truncate_contexts(const data::FusionSample& sample, int K) {
    std::vector<torch::Tensor> x_set;
    for (int i = 0; i < K && i < static_cast<int>(sample.contexts.size()); ++i)
        x_set.push_back(sample.contexts[i].unsqueeze(0));
    return x_set;
}

std::vector<torch::Tensor> expand_contexts(const std::vector<torch::Tensor>& x_set,
                                           int64_t n) {
    std::vector<torch::Tensor> out;
    for (const auto& x : x_set)
        out.push_back(x.expand({n, x.size(1), x.size(2), x.size(3)}));
    return out;
}

constexpr int kImportanceChunk = 32;

}  // namespace

double nll_bpd(model::FusionVAE& m, const data::FusionSample& sample, int K, int S) {
    torch::NoGradGuard ng;
    m->eval();
    auto x_set = truncate_contexts(sample, K);
    auto y = sample.target.unsqueeze(0);
    const int64_t dims = sample.target.numel();
    std::vector<double> log_weights;
    log_weights.reserve(static_cast<size_t>(S));
    for (int done = 0; done < S; done += kImportanceChunk) {
        const int64_t n = std::min(kImportanceChunk, S - done);
        auto yb = y.expand({n, y.size(1), y.size(2), y.size(3)});
        auto fwd = m->forward(expand_contexts(x_set, n), yb);
        auto lw = obj::log_likelihood_per_sample(fwd.params, yb).to(torch::kDouble);
        for (const auto& g : fwd.groups) {
            lw = lw + gaussian_log_prob_batched(g.z, g.prior.mu, g.prior.var) -
                 gaussian_log_prob_batched(g.z, g.posterior->mu, g.posterior->var);
        }
        auto acc_t = lw.contiguous();
        auto acc = acc_t.accessor<double, 1>();
        for (int64_t i = 0; i < n; ++i) log_weights.push_back(acc[i]);
    }
    return bpd_from_nats(importance_log_likelihood(log_weights, S), dims);
}

double nll_bpd(baseline::Cvae& m, const data::FusionSample& sample, int K, int S) {
    torch::NoGradGuard ng;
    m->eval();
    auto x_set = truncate_contexts(sample, K);
    auto y = sample.target.unsqueeze(0);
    const int64_t dims = sample.target.numel();
    std::vector<double> log_weights;
    log_weights.reserve(static_cast<size_t>(S));
    for (int done = 0; done < S; done += kImportanceChunk) {
        const int64_t n = std::min(kImportanceChunk, S - done);
        auto yb = y.expand({n, y.size(1), y.size(2), y.size(3)});
        auto fwd = m->forward(expand_contexts(x_set, n), yb);
        auto lw = obj::log_likelihood_per_sample(fwd.params, yb).to(torch::kDouble) +
                  gaussian_log_prob_batched(fwd.z, fwd.prior.mu, fwd.prior.var) -
                  gaussian_log_prob_batched(fwd.z, fwd.posterior->mu, fwd.posterior->var);
        auto acc_t = lw.contiguous();
        auto acc = acc_t.accessor<double, 1>();
        for (int64_t i = 0; i < n; ++i) log_weights.push_back(acc[i]);
    }
    return bpd_from_nats(importance_log_likelihood(log_weights, S), dims);
}

double mse_min(const std::vector<torch::Tensor>& samples, const torch::Tensor& target) {
    if (samples.empty()) throw std::invalid_argument("mse_min needs at least one sample");
    double best = std::numeric_limits<double>::infinity();
    auto tgt = target.dim() == 3 ? target.unsqueeze(0) : target;
    for (const auto& s : samples) {
        const double mse = (s.to(torch::kDouble) - tgt.to(torch::kDouble))
                               .pow(2)
                               .mean()
                               .item<double>();
        best = std::min(best, mse);
    }
    return best;
}

double mse_min(model::FusionVAE& m, const data::FusionSample& sample, int K, int S) {
    torch::NoGradGuard ng;
    m->eval();
    return mse_min(m->sample(truncate_contexts(sample, K), S), sample.target);
}

double mse_min(baseline::Cvae& m, const data::FusionSample& sample, int K, int S) {
    torch::NoGradGuard ng;
    m->eval();
    return mse_min(m->sample(truncate_contexts(sample, K), S), sample.target);
}

double mse_min(baseline::Fcn& m, const data::FusionSample& sample, int K, int S) {
    torch::NoGradGuard ng;
    m->eval();
    auto out = m->forward(truncate_contexts(sample, K), 1);
    // deterministic network: every sample is identical
    return mse_min(std::vector<torch::Tensor>(static_cast<size_t>(std::max(1, S)), out),
                   sample.target);
}

double EvalReport::nll_avg() const {
    return std::accumulate(nll_per_k.begin(), nll_per_k.end(), 0.0) / 4.0;
}

double EvalReport::mse_avg() const {
    return std::accumulate(mse_per_k.begin(), mse_per_k.end(), 0.0) / 4.0;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j = {{"arch", arch},
                        {"dataset", dataset},
                        {"config_hash", config_hash},
                        {"has_nll", has_nll},
                        {"nll_per_k", nll_per_k},
                        {"mse_per_k", mse_per_k},
                        {"n_importance_samples", n_importance_samples},
                        {"n_mse_samples", n_mse_samples},
                        {"n_runs", n_runs}};
    if (nll_std) j["nll_std"] = *nll_std;
    if (mse_std) j["mse_std"] = *mse_std;
    return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
    EvalReport r;
    r.arch = j.at("arch").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.has_nll = j.at("has_nll").get<bool>();
    r.nll_per_k = j.at("nll_per_k").get<std::array<double, 4>>();
    r.mse_per_k = j.at("mse_per_k").get<std::array<double, 4>>();
    r.n_importance_samples = j.at("n_importance_samples").get<int>();
    r.n_mse_samples = j.at("n_mse_samples").get<int>();
    r.n_runs = j.at("n_runs").get<int>();
    if (j.contains("nll_std")) r.nll_std = j.at("nll_std").get<std::array<double, 4>>();
    if (j.contains("mse_std")) r.mse_std = j.at("mse_std").get<std::array<double, 4>>();
    return r;
}

std::string EvalReport::to_csv() const {
    std::ostringstream out;
    out << "arch,metric,k0,k1,k2,k3,avg\n";
    out << arch << ",nll_bpd,";
    if (has_nll) {
        for (double v : nll_per_k) out << v << ",";
        out << nll_avg() << "\n";
    } else {
        out << "n/a,n/a,n/a,n/a,n/a\n";
    }
    out << arch << ",mse_min,";
    for (double v : mse_per_k) out << v << ",";
    out << mse_avg() << "\n";
    return out.str();
}

RunAggregate aggregate_runs(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("no reports to aggregate");
    for (const auto& r : reports)
        if (r.config_hash != reports[0].config_hash)
            throw std::invalid_argument("aggregate_runs: configuration hash mismatch");

    RunAggregate out;
    out.mean = reports[0];
    out.mean.n_runs = static_cast<int>(reports.size());
    const auto n = static_cast<double>(reports.size());

    std::array<double, 4> nll_mean{}, mse_mean{}, nll_sd{}, mse_sd{};
    for (int k = 0; k < 4; ++k) {
        for (const auto& r : reports) {
            nll_mean[k] += r.nll_per_k[k] / n;
            mse_mean[k] += r.mse_per_k[k] / n;
        }
        for (const auto& r : reports) {
            nll_sd[k] += std::pow(r.nll_per_k[k] - nll_mean[k], 2);
            mse_sd[k] += std::pow(r.mse_per_k[k] - mse_mean[k], 2);
        }
        nll_sd[k] = n > 1 ? std::sqrt(nll_sd[k] / (n - 1)) : 0.0;
        mse_sd[k] = n > 1 ? std::sqrt(mse_sd[k] / (n - 1)) : 0.0;
    }
    out.mean.nll_per_k = nll_mean;
    out.mean.mse_per_k = mse_mean;
    if (reports.size() > 1) {
        out.mean.nll_std = nll_sd;
        out.mean.mse_std = mse_sd;
    }

    size_t best = 0;
    for (size_t i = 1; i < reports.size(); ++i)
        if (reports[i].mse_avg() < reports[best].mse_avg()) best = i;
    out.best = reports[best];
    return out;
}

void render_grid(const std::vector<std::vector<torch::Tensor>>& rows,
                 const std::vector<std::pair<std::string, int>>& column_bands,
                 const std::filesystem::path& out_path) {
    if (rows.empty() || rows[0].empty()) throw std::invalid_argument("empty grid");
    const int th = static_cast<int>(rows[0][0].size(1));
    const int tw = static_cast<int>(rows[0][0].size(2));
    const size_t cols = rows[0].size();
    for (const auto& r : rows)
        if (r.size() != cols) throw std::invalid_argument("ragged grid rows");
    size_t labeled = 0;
    for (const auto& [name, span] : column_bands) labeled += static_cast<size_t>(span);
    if (labeled != cols) throw std::invalid_argument("column bands must cover all columns");

    const int gap = 2;
    const int header = 14;
    const int W = static_cast<int>(cols) * (tw + gap) + gap;
    const int H = header + static_cast<int>(rows.size()) * (th + gap) + gap;
    cv::Mat canvas(H, W, CV_8UC3, cv::Scalar(255, 255, 255));

    int col = 0;
    for (const auto& [name, span] : column_bands) {
        const int x0 = gap + col * (tw + gap);
        cv::putText(canvas, name, cv::Point(x0, header - 4), cv::FONT_HERSHEY_PLAIN, 0.7,
                    cv::Scalar(0, 0, 0));
        col += span;
    }

    for (size_t r = 0; r < rows.size(); ++r) {
        for (size_t c = 0; c < cols; ++c) {
            auto img = rows[r][c];
            if (img.dim() == 4) img = img.squeeze(0);
            if (img.size(0) == 1) img = img.expand({3, img.size(1), img.size(2)});
            auto acc_t = img.contiguous();
            auto acc = acc_t.accessor<float, 3>();
            const int y0 = header + gap + static_cast<int>(r) * (th + gap);
            const int x0 = gap + static_cast<int>(c) * (tw + gap);
            for (int y = 0; y < th; ++y) {
                for (int x = 0; x < tw; ++x) {
                    canvas.at<cv::Vec3b>(y0 + y, x0 + x) =
                        cv::Vec3b(static_cast<uint8_t>(std::lround(acc[2][y][x] * 255.0f)),
                                  static_cast<uint8_t>(std::lround(acc[1][y][x] * 255.0f)),
                                  static_cast<uint8_t>(std::lround(acc[0][y][x] * 255.0f)));
                }
            }
        }
    }
    cv::imwrite(out_path.string(), canvas);
}

}  // namespace fv::eval
