#include "fusionvae/model/checkpoint.hpp"

#include <stdexcept>

namespace fv::model {

namespace {

torch::Tensor string_to_tensor(const std::string& s) {
    auto t = torch::empty({static_cast<int64_t>(s.size())}, torch::kUInt8);
    std::memcpy(t.data_ptr(), s.data(), s.size());
    return t;
}

std::string tensor_to_string(const torch::Tensor& t) {
    auto c = t.contiguous();
    return std::string(reinterpret_cast<const char*>(c.data_ptr()),
                       static_cast<size_t>(c.numel()));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const torch::nn::Module& module,
                     const CheckpointMeta& meta) {
    torch::serialize::OutputArchive archive;
    archive.write("format_version", torch::tensor(static_cast<int64_t>(kCheckpointVersion)));
    nlohmann::json header = {{"kind", meta.kind},
                             {"config", meta.config},
                             {"step", meta.step},
                             {"seed", meta.seed}};
    archive.write("header_json", string_to_tensor(header.dump()));
    for (const auto& p : module.named_parameters())
        archive.write("param/" + p.key(), p.value());
    for (const auto& b : module.named_buffers())
        archive.write("buffer/" + b.key(), b.value());
    archive.save_to(path.string());
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    torch::Tensor version;
    archive.read("format_version", version);
    if (version.item<int64_t>() != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint format version");
    torch::Tensor header;
    archive.read("header_json", header);
    auto j = nlohmann::json::parse(tensor_to_string(header));
    CheckpointMeta meta;
    meta.kind = j.at("kind").get<std::string>();
    meta.config = j.at("config");
    meta.step = j.at("step").get<int64_t>();
    meta.seed = j.at("seed").get<uint64_t>();
    return meta;
}

void load_checkpoint_into(const std::filesystem::path& path, torch::nn::Module& module) {
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    torch::NoGradGuard ng;
    for (const auto& p : module.named_parameters()) {
        torch::Tensor t;
        archive.read("param/" + p.key(), t);
        p.value().copy_(t);
    }
    for (const auto& b : module.named_buffers()) {
        torch::Tensor t;
        archive.read("buffer/" + b.key(), t);
        b.value().copy_(t);
    }
}

}  // namespace fv::model
