#include "fusionvae/data/sources.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <fstream>

#include "fusionvae/data/generate.hpp"

namespace fv::data {

namespace {

// Seven-segment layout on a unit box: (y0,x0)-(y1,x1) per segment.
//   0: top  1: top-left  2: top-right  3: middle  4: bottom-left
//   5: bottom-right  6: bottom
constexpr double kSegments[7][4] = {
    {0.0, 0.0, 0.0, 1.0}, {0.0, 0.0, 0.5, 0.0}, {0.0, 1.0, 0.5, 1.0},
    {0.5, 0.0, 0.5, 1.0}, {0.5, 0.0, 1.0, 0.0}, {0.5, 1.0, 1.0, 1.0},
    {1.0, 0.0, 1.0, 1.0}};

constexpr uint8_t kDigitSegs[10] = {
    0b1110111,  // 0: top, tl, tr, bl, br, bottom
    0b0100100,  // 1
    0b1011101,  // 2
    0b1101101,  // 3
    0b0101110,  // 4
    0b1101011,  // 5
    0b1111011,  // 6
    0b0100101,  // 7
    0b1111111,  // 8
    0b1101111,  // 9
};

void draw_line(torch::Tensor& img, double y0, double x0, double y1, double x1,
               double thickness, double intensity) {
    auto acc = img.accessor<float, 2>();
    const int H = static_cast<int>(img.size(0));
    const int W = static_cast<int>(img.size(1));
    const double len = std::hypot(y1 - y0, x1 - x0);
    const int steps = std::max(2, static_cast<int>(len * 3));
    for (int s = 0; s <= steps; ++s) {
        const double t = static_cast<double>(s) / steps;
        const double cy = y0 + t * (y1 - y0);
        const double cx = x0 + t * (x1 - x0);
        const int r = static_cast<int>(thickness) + 1;
        for (int y = std::max(0, static_cast<int>(cy) - r);
             y <= std::min(H - 1, static_cast<int>(cy) + r); ++y) {
            for (int x = std::max(0, static_cast<int>(cx) - r);
                 x <= std::min(W - 1, static_cast<int>(cx) + r); ++x) {
                const double d = std::hypot(y - cy, x - cx);
                // soft falloff at the stroke edge
                const double v = intensity * std::clamp(thickness * 0.5 + 0.75 - d, 0.0, 1.0);
                if (v > acc[y][x]) acc[y][x] = static_cast<float>(v);
            }
        }
    }
}

}  // namespace

SynthDigitSource::SynthDigitSource(uint64_t seed, size_t count)
    : seed_(seed), count_(count) {}

torch::Tensor SynthDigitSource::get(size_t index) const {
    Rng rng(Rng::derive(seed_, index));
    auto img = torch::zeros({32, 32}, torch::kFloat);

    const int digit = rng.uniform_int(0, 9);
    const double box_h = rng.uniform(14.0, 19.0);
    const double box_w = rng.uniform(8.0, 12.0);
    const double cy = 15.5 + rng.uniform(-2.5, 2.5);
    const double cx = 15.5 + rng.uniform(-2.5, 2.5);
    const double slant = rng.uniform(-0.15, 0.15);
    const double thickness = rng.uniform(1.6, 2.6);
    const double intensity = rng.uniform(0.75, 1.0);

    const uint8_t segs = kDigitSegs[digit];
    for (int s = 0; s < 7; ++s) {
        if (!(segs & (1 << s))) continue;
        const double y0 = cy + (kSegments[s][0] - 0.5) * box_h;
        const double y1 = cy + (kSegments[s][2] - 0.5) * box_h;
        const double x0 = cx + (kSegments[s][1] - 0.5) * box_w + slant * (cy - y0);
        const double x1 = cx + (kSegments[s][3] - 0.5) * box_w + slant * (cy - y1);
        draw_line(img, y0, x0, y1, x1, thickness, intensity);
    }
    return img.clamp(0.0, 1.0).unsqueeze(0);
}

namespace {

uint32_t read_be32(std::istream& in) {
    uint8_t b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | b[3];
}

}  // namespace

MnistSource::MnistSource(const std::filesystem::path& images_idx) {
    std::ifstream in(images_idx, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open MNIST idx file: " + images_idx.string());
    const uint32_t magic = read_be32(in);
    if (magic != 0x00000803) throw std::runtime_error("bad MNIST idx magic");
    const uint32_t n = read_be32(in);
    const uint32_t h = read_be32(in);
    const uint32_t w = read_be32(in);
    if (h != 28 || w != 28) throw std::runtime_error("expected 28x28 MNIST images");
    std::vector<uint8_t> buf(static_cast<size_t>(n) * h * w);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    auto raw = torch::from_blob(buf.data(), {static_cast<int64_t>(n), 1, 28, 28},
                                torch::kUInt8)
                   .to(torch::kFloat)
                   .div(255.0);
    // zero-pad 28x28 -> 32x32
    images_ = torch::constant_pad_nd(raw, {2, 2, 2, 2}, 0.0).contiguous();
}

size_t MnistSource::size() const { return static_cast<size_t>(images_.size(0)); }

torch::Tensor MnistSource::get(size_t index) const {
    return images_[static_cast<int64_t>(index)].clone();
}

ImageDirSource::ImageDirSource(const std::filesystem::path& dir, int channels, int out_h,
                               int out_w)
    : channels_(channels), out_h_(out_h), out_w_(out_w) {
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const auto ext = e.path().extension().string();
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files_.push_back(e.path());
    }
    std::sort(files_.begin(), files_.end());
    if (files_.empty()) throw std::runtime_error("no images found in " + dir.string());
}

torch::Tensor ImageDirSource::get(size_t index) const {
    auto img = load_image(files_[index], channels_);
    if (img.size(0) == 3 && img.size(1) == 218 && img.size(2) == 178)
        return make_celeba_target(img);
    if (img.size(1) != out_h_ || img.size(2) != out_w_)
        img = bilinear_resize(img, out_h_, out_w_).clamp(0.0, 1.0);
    return img;
}

std::shared_ptr<TargetSource> open_target_source(DatasetId id, const std::string& raw_root,
                                                 uint64_t seed, size_t synth_count) {
    namespace fs = std::filesystem;
    if (id == DatasetId::FusionMnist) {
        if (!raw_root.empty()) {
            for (const auto& name :
                 {"train-images-idx3-ubyte", "train-images.idx3-ubyte"}) {
                const auto p = fs::path(raw_root) / name;
                if (fs::exists(p)) return std::make_shared<MnistSource>(p);
            }
            if (fs::exists(raw_root) && fs::is_regular_file(raw_root))
                return std::make_shared<MnistSource>(raw_root);
        }
        return std::make_shared<SynthDigitSource>(seed, synth_count);
    }
    const int hw = 64;
    if (raw_root.empty() || !fs::exists(raw_root))
        throw std::runtime_error("raw data root required for " + to_string(id));
    return std::make_shared<ImageDirSource>(raw_root, 3, hw, hw);
}

torch::Tensor load_image(const std::filesystem::path& path, int channels) {
    cv::Mat m = cv::imread(path.string(),
                           channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
    if (m.empty()) throw std::runtime_error("cannot read image: " + path.string());
    if (channels == 3) cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
    auto t = torch::empty({channels, m.rows, m.cols}, torch::kFloat);
    auto acc = t.accessor<float, 3>();
    for (int y = 0; y < m.rows; ++y) {
        for (int x = 0; x < m.cols; ++x) {
            if (channels == 1) {
                acc[0][y][x] = m.at<uint8_t>(y, x) / 255.0f;
            } else {
                const auto& px = m.at<cv::Vec3b>(y, x);
                for (int c = 0; c < 3; ++c) acc[c][y][x] = px[c] / 255.0f;
            }
        }
    }
    return t;
}

void save_image(const torch::Tensor& img, const std::filesystem::path& path) {
    check_image(img);
    const int c = static_cast<int>(img.size(0));
    const int h = static_cast<int>(img.size(1));
    const int w = static_cast<int>(img.size(2));
    cv::Mat m(h, w, c == 1 ? CV_8UC1 : CV_8UC3);
    auto acc_t = img.contiguous();
    auto acc = acc_t.accessor<float, 3>();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (c == 1) {
                m.at<uint8_t>(y, x) =
                    static_cast<uint8_t>(std::lround(acc[0][y][x] * 255.0f));
            } else {
                // stored BGR for OpenCV
                m.at<cv::Vec3b>(y, x) =
                    cv::Vec3b(static_cast<uint8_t>(std::lround(acc[2][y][x] * 255.0f)),
                              static_cast<uint8_t>(std::lround(acc[1][y][x] * 255.0f)),
                              static_cast<uint8_t>(std::lround(acc[0][y][x] * 255.0f)));
            }
        }
    }
    cv::imwrite(path.string(), m);
}

}  // namespace fv::data
