#include "fusionvae/data/manifest.hpp"

#include <fstream>
#include <iostream>

namespace fv::data {

nlohmann::json Manifest::to_json() const {
    nlohmann::json samples_j = nlohmann::json::array();
    for (const auto& s : samples) {
        samples_j.push_back({{"id", s.id},
                             {"seed", s.seed},
                             {"target_path", s.target_path},
                             {"context_paths", s.context_paths},
                             {"params", s.params}});
    }
    return {{"dataset", dataset},
            {"master_seed", master_seed},
            {"split", split},
            {"samples", samples_j}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
    validate_manifest_json(j);
    Manifest m;
    m.dataset = j.at("dataset").get<std::string>();
    m.master_seed = j.at("master_seed").get<uint64_t>();
    m.split = j.at("split").get<std::string>();
    for (const auto& s : j.at("samples")) {
        ManifestEntry e;
        e.id = s.at("id").get<std::string>();
        e.seed = s.at("seed").get<uint64_t>();
        e.target_path = s.at("target_path").get<std::string>();
        e.context_paths = s.at("context_paths").get<std::vector<std::string>>();
        e.params = s.at("params");
        m.samples.push_back(std::move(e));
    }
    return m;
}

void Manifest::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
    out << to_json().dump(2) << "\n";
}

Manifest Manifest::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read manifest: " + path.string());
    nlohmann::json j;
    in >> j;
    return from_json(j);
}

void validate_manifest_json(const nlohmann::json& j) {
    for (const auto* key : {"dataset", "master_seed", "split", "samples"})
        if (!j.contains(key))
            throw std::runtime_error(std::string("manifest missing key: ") + key);
    if (!j.at("samples").is_array())
        throw std::runtime_error("manifest samples must be an array");
    for (const auto& s : j.at("samples"))
        for (const auto* key : {"id", "seed", "target_path", "context_paths", "params"})
            if (!s.contains(key))
                throw std::runtime_error(std::string("manifest sample missing key: ") + key);
}

FusionSample make_sample(const TargetSource& source, size_t index, DatasetId id,
                         uint64_t sample_seed, const EllipseMaskConfig& mask_cfg,
                         double noise_sigma, const SpriteSet& sprites,
                         const OccluderConfig& occ_cfg, int num_contexts) {
    Rng rng(sample_seed);
    FusionSample s;
    s.target = source.get(index % source.size());
    s.meta.seed = sample_seed;
    s.meta.dataset = to_string(id);
    s.meta.params = {{"mask", mask_cfg.to_json()}, {"noise_sigma", noise_sigma}};
    for (int k = 0; k < num_contexts; ++k) {
        switch (id) {
            case DatasetId::FusionMnist:
                s.contexts.push_back(corrupt_mnist(s.target, rng, mask_cfg, noise_sigma));
                break;
            case DatasetId::FusionCelebA: {
                const auto mask =
                    gen_ellipse_mask(rng, static_cast<int>(s.target.size(1)),
                                     static_cast<int>(s.target.size(2)), mask_cfg);
                s.contexts.push_back(corrupt_with_mask(s.target, mask, rng, 0.0));
                break;
            }
            case DatasetId::FusionTless:
                s.contexts.push_back(compose_tless_occlusion(s.target, sprites, rng, occ_cfg));
                break;
        }
    }
    return s;
}

Manifest generate_dataset(const DatagenConfig& cfg, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    auto source = open_target_source(cfg.dataset, cfg.raw_root, cfg.master_seed,
                                     cfg.limit ? cfg.limit : 1024);

    SpriteSet sprites;
    if (cfg.dataset == DatasetId::FusionTless) {
        const fs::path occ_dir = fs::path(cfg.raw_root) / "occluders";
        if (fs::exists(occ_dir)) {
            for (const auto& e : fs::directory_iterator(occ_dir)) {
                auto cut = cut_objects_canny(load_image(e.path(), 3), cfg.canny);
                if (cut.images.empty()) {
                    std::cerr << "warning: no contour found, skipping "
                              << e.path().string() << "\n";
                    continue;
                }
                sprites.images.push_back(cut.images[0]);
                sprites.masks.push_back(cut.masks[0]);
            }
        }
        if (sprites.images.empty())
            throw std::runtime_error("ftless datagen needs occluder images under raw_root/occluders");
    }

    size_t n = source->size();
    if (cfg.dataset == DatasetId::FusionTless) {
        // every tenth target image is held out for evaluation
        n = cfg.split == "eval" ? (source->size() + 9) / 10
                                : source->size() - (source->size() + 9) / 10;
    }
    if (cfg.limit > 0) n = std::min(n, cfg.limit);

    fs::create_directories(out_dir / cfg.split / "targets");
    fs::create_directories(out_dir / cfg.split / "contexts");

    Manifest m;
    m.dataset = to_string(cfg.dataset);
    m.master_seed = cfg.master_seed;
    m.split = cfg.split;

    for (size_t i = 0; i < n; ++i) {
        size_t src_index = i;
        if (cfg.dataset == DatasetId::FusionTless) {
            // indices 0,10,20,... are the eval hold-out
            src_index = cfg.split == "eval" ? i * 10 : (i / 9) * 10 + (i % 9) + 1;
        }
        const uint64_t seed = Rng::derive(cfg.master_seed, i);
        auto s = make_sample(*source, src_index, cfg.dataset, seed, cfg.mask,
                             cfg.noise_sigma, sprites, cfg.occluders);

        ManifestEntry e;
        e.id = std::to_string(i);
        e.seed = seed;
        e.params = s.meta.params;
        e.target_path = cfg.split + "/targets/" + e.id + ".png";
        save_image(s.target, out_dir / e.target_path);
        for (size_t k = 0; k < s.contexts.size(); ++k) {
            const std::string p =
                cfg.split + "/contexts/" + e.id + "_" + std::to_string(k) + ".png";
            save_image(s.contexts[k], out_dir / p);
            e.context_paths.push_back(p);
        }
        m.samples.push_back(std::move(e));
    }
    m.save(out_dir / ("manifest_" + cfg.split + ".json"));
    return m;
}

FusionSample load_sample(const std::filesystem::path& root, const Manifest& m, size_t index) {
    const auto& e = m.samples.at(index);
    const int channels = m.dataset == "fmnist" ? 1 : 3;
    FusionSample s;
    s.target = load_image(root / e.target_path, channels);
    for (const auto& p : e.context_paths) s.contexts.push_back(load_image(root / p, channels));
    s.meta.seed = e.seed;
    s.meta.dataset = m.dataset;
    s.meta.params = e.params;
    return s;
}

}  // namespace fv::data
