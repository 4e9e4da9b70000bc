// fvlab: experiment lifecycle driver (datagen / train / eval / sample /
// reconstruct / ablate / report).
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "fusionvae/data/manifest.hpp"
#include "fusionvae/eval/metrics.hpp"
#include "fusionvae/model/checkpoint.hpp"
#include "fusionvae/train/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitThreshold = 4;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using KvMap = std::map<std::string, std::string>;

// Flat key=value config file; '#' starts a comment.
KvMap load_kv_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path.string());
    KvMap kv;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " is not key=value");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

void apply_overrides(KvMap& kv, const std::vector<std::string>& overrides) {
    for (const auto& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos) throw ConfigError("override is not key=value: " + ov);
        kv[ov.substr(0, eq)] = ov.substr(eq + 1);
    }
}

json kv_to_json(const KvMap& kv) {
    json j = json::object();
    for (const auto& [k, v] : kv) j[k] = v;
    return j;
}

void write_resolved(const fs::path& out_dir, const std::string& subcommand, const KvMap& kv) {
    fs::create_directories(out_dir);
    std::ofstream f(out_dir / "resolved_config.json");
    f << json{{"subcommand", subcommand}, {"config", kv_to_json(kv)}}.dump(2) << "\n";
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream in(value);
    T out;
    in >> out;
    if (in.fail() || !in.eof()) throw ConfigError("bad numeric value for " + key + ": " + value);
    return out;
}

const std::set<std::string> kTrainKeys = {
    "dataset", "preset", "arch", "agg_mode", "posterior", "epochs", "steps_per_epoch",
    "batch_size", "lr_start", "lr_end", "seed", "runs", "warmup_frac", "grad_clip",
    "train_size", "eval_size", "importance_samples", "mse_samples", "noise_sigma", "raw_root"};

fv::train::TrainConfig train_config_from_kv(const KvMap& kv) {
    for (const auto& [k, _] : kv)
        if (!kTrainKeys.count(k)) throw ConfigError("unknown config key: " + k);
    fv::train::TrainConfig c;
    auto s = [&](const char* k, std::string& dst) {
        if (kv.count(k)) dst = kv.at(k);
    };
    auto num = [&](const char* k, auto& dst) {
        if (kv.count(k)) dst = parse_number<std::decay_t<decltype(dst)>>(k, kv.at(k));
    };
    s("dataset", c.dataset);
    s("preset", c.preset);
    s("arch", c.arch);
    s("agg_mode", c.agg_mode);
    s("posterior", c.posterior);
    s("raw_root", c.raw_root);
    num("epochs", c.epochs);
    num("steps_per_epoch", c.steps_per_epoch);
    num("batch_size", c.batch_size);
    num("lr_start", c.lr_start);
    num("lr_end", c.lr_end);
    num("seed", c.seed);
    num("runs", c.runs);
    num("warmup_frac", c.warmup_frac);
    num("grad_clip", c.grad_clip);
    num("train_size", c.train_size);
    num("eval_size", c.eval_size);
    num("importance_samples", c.importance_samples);
    num("mse_samples", c.mse_samples);
    num("noise_sigma", c.noise_sigma);
    if (c.raw_root.empty()) {
        if (const char* env = std::getenv("FVLAB_DATA_ROOT")) c.raw_root = env;
    }
    try {
        c.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return c;
}

fv::train::AnyModel load_model(const fs::path& ckpt, fv::train::TrainConfig* cfg_out) {
    const auto meta = fv::model::read_checkpoint_meta(ckpt);
    auto cfg = fv::train::TrainConfig::from_json(meta.config.at("train"));
    auto m = fv::train::build_model(cfg);
    fv::model::load_checkpoint_into(ckpt, m.module());
    m.module().eval();
    if (cfg_out) *cfg_out = cfg;
    return m;
}

std::vector<fv::data::FusionSample> eval_slice(const fv::train::TrainConfig& cfg, int count,
                                               uint64_t seed) {
    auto source = fv::train::open_eval_source(cfg);
    const auto id = fv::train::dataset_for(cfg);
    fv::data::EllipseMaskConfig mask;
    fv::data::SpriteSet sprites;
    fv::data::OccluderConfig occ;
    std::vector<fv::data::FusionSample> out;
    for (int i = 0; i < count; ++i)
        out.push_back(fv::data::make_sample(*source, static_cast<size_t>(i) % source->size(),
                                            id, fv::Rng::derive(seed, static_cast<uint64_t>(i)),
                                            mask, cfg.noise_sigma, sprites, occ));
    return out;
}

torch::Tensor blank_like(const torch::Tensor& img) { return torch::ones_like(img) * 0.25; }

std::vector<torch::Tensor> model_samples(fv::train::AnyModel& m,
                                         const std::vector<torch::Tensor>& x_set, int n,
                                         double temperature) {
    if (!m.fv.is_empty()) return m.fv->sample(x_set, n, temperature);
    if (!m.cvae.is_empty()) return m.cvae->sample(x_set, n, temperature);
    auto out = m.fcn->forward(x_set, 1);
    return std::vector<torch::Tensor>(static_cast<size_t>(n), out);
}

int cmd_datagen(const KvMap& kv, const fs::path& out_dir) {
    const std::set<std::string> keys = {"dataset", "seed", "split", "limit", "raw_root",
                                        "noise_sigma"};
    for (const auto& [k, _] : kv)
        if (!keys.count(k)) throw ConfigError("unknown config key: " + k);
    fv::data::DatagenConfig cfg;
    if (kv.count("dataset")) cfg.dataset = fv::data::dataset_from_string(kv.at("dataset"));
    if (kv.count("seed")) cfg.master_seed = parse_number<uint64_t>("seed", kv.at("seed"));
    if (kv.count("split")) cfg.split = kv.at("split");
    if (kv.count("limit")) cfg.limit = parse_number<size_t>("limit", kv.at("limit"));
    if (kv.count("raw_root")) cfg.raw_root = kv.at("raw_root");
    if (kv.count("noise_sigma"))
        cfg.noise_sigma = parse_number<double>("noise_sigma", kv.at("noise_sigma"));
    if (cfg.raw_root.empty()) {
        if (const char* env = std::getenv("FVLAB_DATA_ROOT")) cfg.raw_root = env;
    }
    write_resolved(out_dir, "datagen", kv);
    auto manifest = fv::data::generate_dataset(cfg, out_dir);
    std::cout << "wrote " << manifest.samples.size() << " samples under " << out_dir << "\n";
    return 0;
}

int cmd_train(const KvMap& kv, const fs::path& out_dir) {
    auto cfg = train_config_from_kv(kv);
    write_resolved(out_dir, "train", kv);
    auto result = fv::train::run_experiment(cfg, out_dir);
    std::cout << result.reports.size() << "/" << cfg.runs << " runs succeeded\n";
    std::cout << result.aggregate.mean.to_csv();
    if (result.failed_runs > 0) return kExitRuntime;
    return 0;
}

int cmd_eval(const fs::path& ckpt, const KvMap& overrides, const fs::path& out_dir) {
    fv::train::TrainConfig cfg;
    auto m = load_model(ckpt, &cfg);
    KvMap kv;
    const auto cfg_json = cfg.to_json();
    for (const auto& [k, v] : cfg_json.items())
        kv[k] = v.is_string() ? v.get<std::string>() : v.dump();
    for (const auto& [k, v] : overrides) kv[k] = v;
    cfg = train_config_from_kv(kv);
    write_resolved(out_dir, "eval", kv);
    auto report = fv::train::evaluate_model(m, cfg, fv::Rng::derive(cfg.seed, 0xEA11));
    std::ofstream(out_dir / "report.json") << report.to_json().dump(2) << "\n";
    std::ofstream(out_dir / "report.csv") << report.to_csv();
    std::cout << report.to_csv();
    return 0;
}

int cmd_sample(const fs::path& ckpt, int k, int n, int rows, double temperature,
               uint64_t seed, const fs::path& out_dir) {
    if (k < 0 || k > 3) throw ConfigError("--k must be in [0,3]");
    fv::train::TrainConfig cfg;
    auto m = load_model(ckpt, &cfg);
    torch::manual_seed(seed);
    auto slice = eval_slice(cfg, rows, seed);
    std::vector<std::vector<torch::Tensor>> grid;
    for (const auto& sample : slice) {
        std::vector<torch::Tensor> x_set;
        for (int i = 0; i < k; ++i) x_set.push_back(sample.contexts[static_cast<size_t>(i)].unsqueeze(0));
        std::vector<torch::Tensor> row;
        for (int i = 0; i < k; ++i) row.push_back(sample.contexts[static_cast<size_t>(i)]);
        for (auto& s : model_samples(m, x_set, n, temperature)) row.push_back(s.squeeze(0));
        grid.push_back(row);
    }
    std::vector<std::pair<std::string, int>> bands;
    if (k > 0) bands.emplace_back("context", k);
    bands.emplace_back("samples", n);
    fs::create_directories(out_dir);
    fv::eval::render_grid(grid, bands, out_dir / "samples.png");
    std::cout << "wrote " << (out_dir / "samples.png") << "\n";
    return 0;
}

int cmd_reconstruct(const fs::path& ckpt, int k, int rows, uint64_t seed,
                    const fs::path& out_dir) {
    if (k < 0 || k > 3) throw ConfigError("--k must be in [0,3]");
    fv::train::TrainConfig cfg;
    auto m = load_model(ckpt, &cfg);
    if (m.is_fcn()) throw ConfigError("reconstruct needs a latent-variable model");
    torch::NoGradGuard ng;
    torch::manual_seed(seed);
    auto slice = eval_slice(cfg, rows, seed);
    std::vector<std::vector<torch::Tensor>> grid;
    for (const auto& sample : slice) {
        std::vector<torch::Tensor> x_set;
        for (int i = 0; i < k; ++i) x_set.push_back(sample.contexts[static_cast<size_t>(i)].unsqueeze(0));
        auto y = sample.target.unsqueeze(0);
        torch::Tensor recon;
        if (!m.fv.is_empty()) {
            auto fwd = m.fv->forward(x_set, y);
            recon = fv::obj::likelihood_mean(fwd.params);
        } else {
            auto fwd = m.cvae->forward(x_set, y);
            recon = fv::obj::likelihood_mean(fwd.params);
        }
        std::vector<torch::Tensor> row;
        for (int i = 0; i < k; ++i) row.push_back(sample.contexts[static_cast<size_t>(i)]);
        row.push_back(sample.target);
        row.push_back(recon.squeeze(0));
        grid.push_back(row);
    }
    std::vector<std::pair<std::string, int>> bands;
    if (k > 0) bands.emplace_back("context", k);
    bands.emplace_back("target", 1);
    bands.emplace_back("recon", 1);
    fs::create_directories(out_dir);
    fv::eval::render_grid(grid, bands, out_dir / "reconstructions.png");
    std::cout << "wrote " << (out_dir / "reconstructions.png") << "\n";
    return 0;
}

int cmd_ablate(const KvMap& kv, const std::string& mode, const fs::path& out_dir) {
    auto base = train_config_from_kv(kv);
    if (base.arch != "fusionvae") throw ConfigError("ablate applies to arch=fusionvae");
    struct Cell {
        std::string posterior, agg;
    };
    std::vector<Cell> cells;
    const std::vector<std::string> aggs = {"MaxAggAdd",  "MeanAggAdd", "BayAggAdd",
                                           "MaxAggAll",  "MeanAggAll", "BayAggAll"};
    if (mode == "posterior") {
        cells = {{"q(y)", "MaxAggAdd"}, {"q(x,y)", "MaxAggAdd"}};
    } else if (mode == "aggregation") {
        for (const auto& a : aggs) cells.push_back({"q(y)", a});
    } else if (mode == "full") {
        for (const auto& p : {"q(y)", "q(x,y)"})
            for (const auto& a : aggs) cells.push_back({p, a});
    } else {
        throw ConfigError("--mode must be posterior|aggregation|full");
    }
    write_resolved(out_dir, "ablate", kv);
    std::ostringstream table;
    table << "posterior,agg_mode,nll_k0,nll_k1,nll_k2,nll_k3,nll_avg,"
             "mse_k0,mse_k1,mse_k2,mse_k3,mse_avg\n";
    for (const auto& cell : cells) {
        auto cfg = base;
        cfg.posterior = cell.posterior;
        cfg.agg_mode = cell.agg;
        const std::string label =
            (cell.posterior == "q(y)" ? std::string("qy") : std::string("qxy")) + "_" + cell.agg;
        auto result = fv::train::run_experiment(cfg, out_dir / label);
        const auto& r = result.aggregate.mean;
        table << cell.posterior << "," << cell.agg << ",";
        for (double v : r.nll_per_k) table << v << ",";
        table << r.nll_avg() << ",";
        for (size_t i = 0; i < 4; ++i) table << r.mse_per_k[i] << ",";
        table << r.mse_avg() << "\n";
    }
    std::ofstream(out_dir / "ablation.csv") << table.str();
    std::cout << table.str();
    return 0;
}

int cmd_report(const fs::path& in_dir, const fs::path& out_dir, bool check_trend) {
    if (!fs::exists(in_dir)) throw ConfigError("input dir does not exist: " + in_dir.string());
    std::map<std::string, std::vector<fv::eval::EvalReport>> groups;
    for (const auto& entry : fs::recursive_directory_iterator(in_dir)) {
        if (entry.path().filename() != "report.json") continue;
        std::ifstream f(entry.path());
        auto r = fv::eval::EvalReport::from_json(json::parse(f));
        groups[r.arch + ":" + r.config_hash].push_back(r);
    }
    if (groups.empty()) throw std::runtime_error("no report.json files under " + in_dir.string());
    fs::create_directories(out_dir);
    std::ostringstream mean_table, best_table;
    mean_table << "arch,runs,metric,k0,k1,k2,k3,avg,std_avg\n";
    best_table << "arch,metric,k0,k1,k2,k3,avg\n";
    std::optional<fv::eval::EvalReport> fusion_mean, fcn_mean;
    for (const auto& [key, reports] : groups) {
        auto agg = fv::eval::aggregate_runs(reports);
        const auto& m = agg.mean;
        auto emit = [&](const char* metric, const std::array<double, 4>& v, double avg,
                        const std::optional<std::array<double, 4>>& sd) {
            mean_table << m.arch << "," << m.n_runs << "," << metric << ",";
            for (double x : v) mean_table << x << ",";
            mean_table << avg << ",";
            if (sd) {
                double s = 0;
                for (double x : *sd) s += x / 4.0;
                mean_table << s;
            } else {
                mean_table << "n/a";
            }
            mean_table << "\n";
        };
        if (m.has_nll) emit("nll_bpd", m.nll_per_k, m.nll_avg(), m.nll_std);
        emit("mse_min", m.mse_per_k, m.mse_avg(), m.mse_std);
        best_table << agg.best.to_csv();
        if (m.arch == "fusionvae") fusion_mean = m;
        if (m.arch == "fcn" || m.arch == "fcn+s") fcn_mean = m;
    }
    std::ofstream(out_dir / "table_mean.csv") << mean_table.str();
    std::ofstream(out_dir / "table_best.csv") << best_table.str();
    std::cout << mean_table.str();
    if (check_trend) {
        if (!fusion_mean) throw std::runtime_error("--check-trend needs a fusionvae report");
        bool ok = fusion_mean->mse_per_k[3] < 0.5 * fusion_mean->mse_per_k[0] &&
                  fusion_mean->nll_per_k[0] > fusion_mean->nll_per_k[3];
        if (fcn_mean) ok = ok && fusion_mean->mse_avg() < fcn_mean->mse_avg();
        std::cout << "trend check: " << (ok ? "pass" : "fail") << "\n";
        if (!ok) return kExitThreshold;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fusion experiment lab"};
    app.require_subcommand(1);

    std::string config_path, out = "out", mode = "aggregation", in_dir;
    std::vector<std::string> overrides;
    std::string ckpt;
    int k = 3, n = 8, rows = 6;
    double temperature = 1.0;
    uint64_t seed = 1;
    bool check_trend = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "flat key=value config file");
        sub->add_option("--set", overrides, "override, key=value (repeatable)");
        sub->add_option("--out", out, "output directory");
    };

    auto* sc_datagen = app.add_subcommand("datagen", "generate a fusion dataset");
    add_common(sc_datagen);
    auto* sc_train = app.add_subcommand("train", "train + evaluate, multiple seeds");
    add_common(sc_train);
    auto* sc_eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(sc_eval);
    sc_eval->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    auto* sc_sample = app.add_subcommand("sample", "render prior samples grid");
    add_common(sc_sample);
    sc_sample->add_option("--checkpoint", ckpt)->required();
    sc_sample->add_option("--k", k, "context count [0,3]");
    sc_sample->add_option("--n", n, "samples per row");
    sc_sample->add_option("--rows", rows, "test samples (rows)");
    sc_sample->add_option("--temperature", temperature);
    sc_sample->add_option("--seed", seed);
    auto* sc_recon = app.add_subcommand("reconstruct", "posterior reconstructions grid");
    add_common(sc_recon);
    sc_recon->add_option("--checkpoint", ckpt)->required();
    sc_recon->add_option("--k", k, "context count [0,3]");
    sc_recon->add_option("--rows", rows, "test samples (rows)");
    sc_recon->add_option("--seed", seed);
    auto* sc_ablate = app.add_subcommand("ablate", "posterior/aggregation ablation grid");
    add_common(sc_ablate);
    sc_ablate->add_option("--mode", mode, "posterior|aggregation|full");
    auto* sc_report = app.add_subcommand("report", "aggregate eval reports into tables");
    add_common(sc_report);
    sc_report->add_option("--in", in_dir, "directory with report.json files")->required();
    sc_report->add_flag("--check-trend", check_trend, "fail (exit 4) unless the "
                        "more-contexts-better ordering holds");

    CLI11_PARSE(app, argc, argv);

    try {
        KvMap kv;
        if (!config_path.empty()) kv = load_kv_file(config_path);
        apply_overrides(kv, overrides);
        if (sc_datagen->parsed()) return cmd_datagen(kv, out);
        if (sc_train->parsed()) return cmd_train(kv, out);
        if (sc_eval->parsed()) return cmd_eval(ckpt, kv, out);
        if (sc_sample->parsed()) return cmd_sample(ckpt, k, n, rows, temperature, seed, out);
        if (sc_recon->parsed()) return cmd_reconstruct(ckpt, k, rows, seed, out);
        if (sc_ablate->parsed()) return cmd_ablate(kv, mode, out);
        if (sc_report->parsed()) return cmd_report(in_dir, out, check_trend);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
