#include "fusionvae/data/generate.hpp"

#include <opencv2/imgproc.hpp>

#include <cmath>
#include <stdexcept>

namespace fv::data {

nlohmann::json EllipseMaskConfig::to_json() const {
    return {{"min_ellipses", min_ellipses},
            {"max_ellipses", max_ellipses},
            {"min_axis_frac", min_axis_frac},
            {"max_axis_frac", max_axis_frac}};
}

EllipseMaskConfig EllipseMaskConfig::from_json(const nlohmann::json& j) {
    EllipseMaskConfig c;
    c.min_ellipses = j.at("min_ellipses").get<int>();
    c.max_ellipses = j.at("max_ellipses").get<int>();
    c.min_axis_frac = j.at("min_axis_frac").get<double>();
    c.max_axis_frac = j.at("max_axis_frac").get<double>();
    return c;
}

torch::Tensor gen_ellipse_mask(Rng& rng, int h, int w, const EllipseMaskConfig& cfg) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("mask dims must be positive");
    auto mask = torch::zeros({h, w}, torch::kBool);
    auto acc = mask.accessor<bool, 2>();
    const double base = std::min(h, w);
    const int n = rng.uniform_int(cfg.min_ellipses, cfg.max_ellipses);
    for (int e = 0; e < n; ++e) {
        double a = 0.0, b = 0.0;
        // resample degenerate axes; never emit a zero-area ellipse
        do {
            a = rng.uniform(cfg.min_axis_frac, cfg.max_axis_frac) * base;
            b = rng.uniform(cfg.min_axis_frac, cfg.max_axis_frac) * base;
        } while (a < 0.5 || b < 0.5);
        const double cy = rng.uniform(0.0, h - 1.0);
        const double cx = rng.uniform(0.0, w - 1.0);
        const double theta = rng.uniform(0.0, 2.0 * M_PI);
        const double ct = std::cos(theta), st = std::sin(theta);
        const int y0 = std::max(0, static_cast<int>(cy - std::max(a, b)) - 1);
        const int y1 = std::min(h - 1, static_cast<int>(cy + std::max(a, b)) + 1);
        const int x0 = std::max(0, static_cast<int>(cx - std::max(a, b)) - 1);
        const int x1 = std::min(w - 1, static_cast<int>(cx + std::max(a, b)) + 1);
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double dy = y - cy, dx = x - cx;
                const double u = (dx * ct + dy * st) / a;
                const double v = (-dx * st + dy * ct) / b;
                if (u * u + v * v <= 1.0) acc[y][x] = true;
            }
        }
        // the ellipse center always lies inside the frame region
        acc[std::clamp(static_cast<int>(std::lround(cy)), 0, h - 1)]
           [std::clamp(static_cast<int>(std::lround(cx)), 0, w - 1)] = true;
    }
    return mask;
}

torch::Tensor corrupt_with_mask(const torch::Tensor& target, const torch::Tensor& mask,
                                Rng& rng, double sigma) {
    check_image(target);
    check_mask(mask, target);
    auto out = target * mask.to(torch::kFloat).unsqueeze(0);
    if (sigma > 0.0) {
        auto noise = torch::empty_like(out);
        auto flat = noise.view(-1);
        auto acc = flat.accessor<float, 1>();
        for (int64_t i = 0; i < flat.size(0); ++i)
            acc[i] = static_cast<float>(sigma * rng.normal());
        out = out + noise;
    }
    return out.clamp(0.0, 1.0);
}

torch::Tensor corrupt_mnist(const torch::Tensor& target, Rng& rng,
                            const EllipseMaskConfig& mask_cfg, double sigma) {
    const auto mask =
        gen_ellipse_mask(rng, static_cast<int>(target.size(1)),
                         static_cast<int>(target.size(2)), mask_cfg);
    return corrupt_with_mask(target, mask, rng, sigma);
}

torch::Tensor bilinear_resize(const torch::Tensor& img, int out_h, int out_w) {
    check_image(img);
    const int c = static_cast<int>(img.size(0));
    const int ih = static_cast<int>(img.size(1));
    const int iw = static_cast<int>(img.size(2));
    auto out = torch::empty({c, out_h, out_w}, torch::kFloat);
    auto src = img.accessor<float, 3>();
    auto dst = out.accessor<float, 3>();
    const double sy = static_cast<double>(ih) / out_h;
    const double sx = static_cast<double>(iw) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, ih - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, ih - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, iw - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, iw - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < c; ++ch) {
                const double v = (1 - wy) * ((1 - wx) * src[ch][y0][x0] + wx * src[ch][y0][x1]) +
                                 wy * ((1 - wx) * src[ch][y1][x0] + wx * src[ch][y1][x1]);
                dst[ch][y][x] = static_cast<float>(v);
            }
        }
    }
    return out;
}

torch::Tensor make_celeba_target(const torch::Tensor& raw) {
    check_image(raw);
    if (raw.size(0) != 3 || raw.size(1) != 218 || raw.size(2) != 178)
        throw std::invalid_argument("expected aligned 3x218x178 CelebA image");
    const int oy = (218 - 148) / 2;  // 35
    const int ox = (178 - 148) / 2;  // 15
    auto crop = raw.index({torch::indexing::Slice(),
                           torch::indexing::Slice(oy, oy + 148),
                           torch::indexing::Slice(ox, ox + 148)})
                    .contiguous();
    return bilinear_resize(crop, 64, 64).clamp(0.0, 1.0);
}

bool tless_occluder_class_in_split(int cls, bool train_split) {
    static const std::vector<int> train = {1, 2, 5, 6, 7, 11, 12, 13, 14, 25, 26, 27};
    static const std::vector<int> eval = {3, 4, 8, 9, 10, 15, 16, 17, 18, 28, 29, 30};
    const auto& set = train_split ? train : eval;
    return std::find(set.begin(), set.end(), cls) != set.end();
}

namespace {

cv::Mat to_gray_8u(const torch::Tensor& image) {
    const int h = static_cast<int>(image.size(1));
    const int w = static_cast<int>(image.size(2));
    auto gray = image.size(0) == 1 ? image[0] : image.mean(0);
    cv::Mat m(h, w, CV_8UC1);
    auto acc_t = gray.contiguous();
    auto acc = acc_t.accessor<float, 2>();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            m.at<uint8_t>(y, x) = static_cast<uint8_t>(std::lround(acc[y][x] * 255.0));
    return m;
}

}  // namespace

SpriteSet cut_objects_canny(const torch::Tensor& image, const CannyConfig& cfg,
                            int source_class) {
    check_image(image);
    SpriteSet set;
    set.source_class = source_class;

    cv::Mat gray = to_gray_8u(image);
    cv::Mat blurred;
    cv::GaussianBlur(gray, blurred, cv::Size(cfg.blur_kernel, cfg.blur_kernel), 0.0);
    cv::Mat edges;
    cv::Canny(blurred, edges, cfg.low_threshold, cfg.high_threshold);

    std::vector<std::vector<cv::Point>> contours;
    cv::findContours(edges, contours, cv::RETR_EXTERNAL, cv::CHAIN_APPROX_SIMPLE);
    if (contours.empty()) return set;  // caller logs and skips

    // largest outer contour is taken as the object silhouette
    size_t best = 0;
    double best_area = -1.0;
    for (size_t i = 0; i < contours.size(); ++i) {
        const double a = cv::contourArea(contours[i]);
        if (a > best_area) {
            best_area = a;
            best = i;
        }
    }
    cv::Mat filled = cv::Mat::zeros(gray.size(), CV_8UC1);
    cv::drawContours(filled, contours, static_cast<int>(best), cv::Scalar(255), cv::FILLED);

    const cv::Rect box = cv::boundingRect(contours[best]);
    if (box.width == 0 || box.height == 0) return set;

    const int c = static_cast<int>(image.size(0));
    auto sprite = torch::zeros({c, box.height, box.width}, torch::kFloat);
    auto alpha = torch::zeros({box.height, box.width}, torch::kBool);
    auto img_acc_t = image.contiguous();
    auto img_acc = img_acc_t.accessor<float, 3>();
    auto spr_acc = sprite.accessor<float, 3>();
    auto a_acc = alpha.accessor<bool, 2>();
    for (int y = 0; y < box.height; ++y) {
        for (int x = 0; x < box.width; ++x) {
            if (filled.at<uint8_t>(box.y + y, box.x + x)) {
                a_acc[y][x] = true;
                for (int ch = 0; ch < c; ++ch)
                    spr_acc[ch][y][x] = img_acc[ch][box.y + y][box.x + x];
            }
        }
    }
    set.images.push_back(sprite);
    set.masks.push_back(alpha);
    return set;
}

namespace {

// Nearest-neighbour paste of a rotated/scaled sprite; later sprites
// overwrite earlier ones.
void paste_sprite(torch::Tensor& canvas, const torch::Tensor& sprite,
                  const torch::Tensor& alpha, double cy, double cx, double scale,
                  double theta) {
    const int H = static_cast<int>(canvas.size(1));
    const int W = static_cast<int>(canvas.size(2));
    const int sh = static_cast<int>(sprite.size(1));
    const int sw = static_cast<int>(sprite.size(2));
    const int c = static_cast<int>(canvas.size(0));
    const double ct = std::cos(theta), st = std::sin(theta);
    const double half = 0.5 * scale * std::hypot(sh, sw);
    auto can = canvas.accessor<float, 3>();
    auto spr = sprite.accessor<float, 3>();
    auto alp = alpha.accessor<bool, 2>();
    const int y0 = std::max(0, static_cast<int>(cy - half) - 1);
    const int y1 = std::min(H - 1, static_cast<int>(cy + half) + 1);
    const int x0 = std::max(0, static_cast<int>(cx - half) - 1);
    const int x1 = std::min(W - 1, static_cast<int>(cx + half) + 1);
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            // inverse transform into sprite coordinates
            const double dy = (y - cy) / scale, dx = (x - cx) / scale;
            const double sy = dy * ct - dx * st + sh * 0.5;
            const double sx = dy * st + dx * ct + sw * 0.5;
            const int iy = static_cast<int>(std::lround(sy));
            const int ix = static_cast<int>(std::lround(sx));
            if (iy < 0 || iy >= sh || ix < 0 || ix >= sw || !alp[iy][ix]) continue;
            for (int ch = 0; ch < c; ++ch) can[ch][y][x] = spr[ch][iy][ix];
        }
    }
}

}  // namespace

torch::Tensor compose_tless_occlusion(const torch::Tensor& target, const SpriteSet& sprites,
                                      Rng& rng, const OccluderConfig& cfg) {
    check_image(target);
    auto out = target.clone();
    const int count = cfg.max_count >= cfg.min_count
                          ? rng.uniform_int(cfg.min_count, cfg.max_count)
                          : 0;
    if (count == 0) return out;
    if (sprites.images.empty())
        throw std::invalid_argument("sprite set must be non-empty");
    const int H = static_cast<int>(target.size(1));
    const int W = static_cast<int>(target.size(2));
    for (int i = 0; i < count; ++i) {
        const int idx = rng.uniform_int(0, static_cast<int>(sprites.images.size()) - 1);
        const auto& spr = sprites.images[idx];
        double scale = rng.uniform(cfg.min_scale, cfg.max_scale);
        const double max_dim = scale * std::max(spr.size(1), spr.size(2));
        if (max_dim > std::min(H, W)) scale *= std::min(H, W) / max_dim;
        const double theta = rng.uniform(0.0, 2.0 * M_PI);
        const double cy = rng.uniform(0.0, H - 1.0);
        const double cx = rng.uniform(0.0, W - 1.0);
        paste_sprite(out, spr, sprites.masks[idx], cy, cx, scale, theta);
    }
    return out;
}

int sample_context_count(Rng& rng) { return rng.uniform_int(0, 3); }

namespace {

torch::Tensor hflip(const torch::Tensor& img) { return img.flip({2}).contiguous(); }

}  // namespace

FusionSample augment(const FusionSample& sample, Rng& rng, DatasetId id,
                     const EllipseMaskConfig& mask_cfg, double noise_sigma,
                     double flip_prob, const SpriteSet* sprites, const OccluderConfig* occ) {
    FusionSample out;
    out.meta = sample.meta;

    bool flip = false;
    if (id == DatasetId::FusionCelebA || id == DatasetId::FusionTless)
        flip = rng.uniform() < flip_prob;

    out.target = flip ? hflip(sample.target) : sample.target.clone();

    switch (id) {
        case DatasetId::FusionMnist: {
            // masks and noise are regenerated live; contexts derive from
            // the (transformed) target, one fresh corruption per slot
            for (size_t i = 0; i < sample.contexts.size(); ++i)
                out.contexts.push_back(corrupt_mnist(out.target, rng, mask_cfg, noise_sigma));
            break;
        }
        case DatasetId::FusionCelebA: {
            for (size_t i = 0; i < sample.contexts.size(); ++i) {
                const auto mask = gen_ellipse_mask(rng, static_cast<int>(out.target.size(1)),
                                                   static_cast<int>(out.target.size(2)), mask_cfg);
                out.contexts.push_back(corrupt_with_mask(out.target, mask, rng, 0.0));
            }
            break;
        }
        case DatasetId::FusionTless: {
            if (sprites && occ && !sprites->images.empty()) {
                // occlusion is re-composed live over the transformed target
                for (size_t i = 0; i < sample.contexts.size(); ++i)
                    out.contexts.push_back(compose_tless_occlusion(out.target, *sprites, rng, *occ));
            } else {
                for (const auto& ctx : sample.contexts)
                    out.contexts.push_back(flip ? hflip(ctx) : ctx.clone());
            }
            break;
        }
    }
    return out;
}

}  // namespace fv::data
