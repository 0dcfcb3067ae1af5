#include "gearlab/render.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace gearlab {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kAtlasHalfSpan = 50.0;  // mm around the peg
constexpr std::array<float, 3> kOccluder{0.22f, 0.22f, 0.24f};

double smoothstep_edge(double signed_dist, double width) { return 1.0 / (1.0 + std::exp(-signed_dist / width)); }

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

std::vector<std::uint8_t> ObsImage::to_rgb8() const {
    std::vector<std::uint8_t> out(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i)
        out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(pixels[i], 0.0f, 1.0f) * 255.0f));
    return out;
}

ObsImage ObsImage::from_rgb8(int width, int height, const std::vector<std::uint8_t>& rgb) {
    if (rgb.size() != static_cast<std::size_t>(width) * height * 3) throw std::invalid_argument("rgb buffer size mismatch");
    ObsImage img{width, height, std::vector<float>(rgb.size())};
    for (std::size_t i = 0; i < rgb.size(); ++i) img.pixels[i] = rgb[i] / 255.0f;
    return img;
}

void SceneParams::validate() const {
    if (!(platform_radius_mm > 0 && peg_radius_mm > 0 && occluder_radius_mm > 0 && mounted_gear_radius_mm > 0))
        throw std::invalid_argument("scene radii must be positive");
    if (!(view_window_mm > 0)) throw std::invalid_argument("view_window_mm must be positive");
    if (mounted_gear_teeth < 1) throw std::invalid_argument("mounted_gear_teeth must be at least 1");
    if (image_width < 1 || image_height < 1) throw std::invalid_argument("image size must be positive");
    if (!peg_mm.finite() || !mounted_gear_offset_mm.finite()) throw std::invalid_argument("scene positions must be finite");
}

std::string SceneParams::canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "peg=" << peg_mm.x << ',' << peg_mm.y << ";platform_r=" << platform_radius_mm << ";peg_r=" << peg_radius_mm
       << ";occluder_r=" << occluder_radius_mm << ";seed=" << texture_seed << ";view=" << view_window_mm
       << ";gear=" << mounted_gear_offset_mm.x << ',' << mounted_gear_offset_mm.y << ";teeth=" << mounted_gear_teeth
       << ";gear_r=" << mounted_gear_radius_mm << ";img=" << image_width << 'x' << image_height;
    return os.str();
}

SceneRenderer::SceneRenderer(const SceneParams& scene) : scene_(scene) {
    scene_.validate();
    Rng rng(stream_seed(scene_.texture_seed, 0x7e47u));
    auto make_waves = [&](int n, double lambda_lo, double lambda_hi, double gain) {
        std::vector<Wave> w;
        for (int i = 0; i < n; ++i) {
            const double lambda = rng.uniform(lambda_lo, lambda_hi);
            const double dir = rng.uniform(0.0, kTwoPi);
            Wave wave{kTwoPi / lambda * std::cos(dir), kTwoPi / lambda * std::sin(dir), rng.uniform(0.0, kTwoPi), {}};
            for (double& gch : wave.gain) gch = rng.uniform(-gain, gain);
            w.push_back(wave);
        }
        return w;
    };
    background_ = make_waves(8, 2.5, 9.0, 0.09);
    platform_ = make_waves(6, 3.0, 7.0, 0.06);

    x0_ = scene_.peg_mm.x - kAtlasHalfSpan;
    y0_ = scene_.peg_mm.y - kAtlasHalfSpan;
    aw_ = ah_ = static_cast<int>(2 * kAtlasHalfSpan * res_) + 1;
    atlas_.resize(static_cast<std::size_t>(aw_) * ah_ * 3);
#pragma omp parallel for schedule(static)
    for (int v = 0; v < ah_; ++v)
        for (int u = 0; u < aw_; ++u) {
            const auto c = shade({x0_ + u / res_, y0_ + v / res_});
            std::copy(c.begin(), c.end(), atlas_.begin() + (static_cast<std::ptrdiff_t>(v) * aw_ + u) * 3);
        }
}

std::array<float, 3> SceneRenderer::shade(Vec2Mm p) const {
    const SceneParams& s = scene_;
    std::array<double, 3> c{0.35, 0.30, 0.25};
    for (const Wave& w : background_) {
        const double v = std::sin(w.kx * p.x + w.ky * p.y + w.phase);
        for (int ch = 0; ch < 3; ++ch) c[ch] += w.gain[ch] * v;
    }

    const Vec2Mm q = p - s.peg_mm;
    const double r = q.norm();
    const double theta = std::atan2(q.y, q.x);
    std::array<double, 3> plat{0.55, 0.58, 0.62};
    plat[0] += 0.18 * std::sin(kTwoPi * r / 4.0);
    plat[1] += 0.12 * std::cos(theta) + 0.07 * std::sin(4.0 * theta + r / 3.0);
    plat[2] += 0.12 * std::sin(theta) + 0.05 * std::sin(kTwoPi * r / 6.5);
    for (const Wave& w : platform_) {
        const double v = std::sin(w.kx * q.x + w.ky * q.y + w.phase);
        for (int ch = 0; ch < 3; ++ch) plat[ch] += w.gain[ch] * v;
    }
    const double a_plat = smoothstep_edge(s.platform_radius_mm - r, 0.4);
    for (int ch = 0; ch < 3; ++ch) c[ch] += a_plat * (plat[ch] - c[ch]);

    const Vec2Mm g = q - s.mounted_gear_offset_mm;
    const double dg = g.norm();
    const double phi = std::atan2(g.y, g.x);
    const double depth = 1.6;
    const double edge = s.mounted_gear_radius_mm - depth + depth * (0.5 + 0.5 * std::tanh(3.0 * std::cos(s.mounted_gear_teeth * phi)));
    const double a_gear = smoothstep_edge(edge - dg, 0.25);
    const double hub = smoothstep_edge(0.35 * s.mounted_gear_radius_mm - dg, 0.25);
    const std::array<double, 3> gear{0.78 - 0.2 * hub, 0.77 - 0.2 * hub, 0.80 - 0.15 * hub};
    for (int ch = 0; ch < 3; ++ch) c[ch] += a_gear * (gear[ch] - c[ch]);

    const double a_peg = smoothstep_edge(s.peg_radius_mm - r, 0.2);
    const std::array<double, 3> peg{0.90, 0.82, 0.30};
    for (int ch = 0; ch < 3; ++ch) c[ch] += a_peg * (peg[ch] - c[ch]);

    return {clamp01(c[0]), clamp01(c[1]), clamp01(c[2])};
}

std::array<float, 3> SceneRenderer::sample(double x, double y) const {
    const double u = std::clamp((x - x0_) * res_, 0.0, aw_ - 1.000001);
    const double v = std::clamp((y - y0_) * res_, 0.0, ah_ - 1.000001);
    const int iu = static_cast<int>(u), iv = static_cast<int>(v);
    const float fu = static_cast<float>(u - iu), fv = static_cast<float>(v - iv);
    const float* p00 = atlas_.data() + (static_cast<std::ptrdiff_t>(iv) * aw_ + iu) * 3;
    const float* p10 = p00 + 3;
    const float* p01 = p00 + static_cast<std::ptrdiff_t>(aw_) * 3;
    const float* p11 = p01 + 3;
    std::array<float, 3> out;
    for (int ch = 0; ch < 3; ++ch) {
        const float top = p00[ch] + fu * (p10[ch] - p00[ch]);
        const float bot = p01[ch] + fu * (p11[ch] - p01[ch]);
        out[ch] = top + fv * (bot - top);
    }
    return out;
}

template <class Emit>
void SceneRenderer::raster(Vec2Mm gripper, Emit&& emit) const {
    const int W = scene_.image_width, H = scene_.image_height;
    const double px = scene_.view_window_mm / W;  // square pixels
    const double occ2 = scene_.occluder_radius_mm * scene_.occluder_radius_mm;
    for (int i = 0; i < H; ++i) {
        const double ly = -(i + 0.5 - 0.5 * H) * px;
        for (int j = 0; j < W; ++j) {
            const double lx = (j + 0.5 - 0.5 * W) * px;
            if (lx * lx + ly * ly < occ2) {
                emit(i, j, kOccluder);
                continue;
            }
            emit(i, j, sample(gripper.x + lx, gripper.y + ly));
        }
    }
}

ObsImage SceneRenderer::render(Vec2Mm gripper) const {
    ObsImage img{scene_.image_width, scene_.image_height,
                 std::vector<float>(static_cast<std::size_t>(scene_.image_width) * scene_.image_height * 3)};
    raster(gripper, [&](int i, int j, const std::array<float, 3>& c) {
        std::copy(c.begin(), c.end(), img.pixels.begin() + (static_cast<std::ptrdiff_t>(i) * img.width + j) * 3);
    });
    return img;
}

void SceneRenderer::render_chw(Vec2Mm gripper, float* out) const {
    const std::ptrdiff_t plane = static_cast<std::ptrdiff_t>(scene_.image_width) * scene_.image_height;
    raster(gripper, [&](int i, int j, const std::array<float, 3>& c) {
        const std::ptrdiff_t o = static_cast<std::ptrdiff_t>(i) * scene_.image_width + j;
        out[o] = c[0];
        out[plane + o] = c[1];
        out[2 * plane + o] = c[2];
    });
}

std::shared_ptr<const SceneRenderer> renderer_for(const SceneParams& scene) {
    static std::mutex mu;
    static std::map<std::string, std::shared_ptr<const SceneRenderer>> cache;
    const std::string key = scene.canonical();
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto r = std::make_shared<const SceneRenderer>(scene);
    cache.emplace(key, r);
    return r;
}

ObsImage render_observation(Vec2Mm gripper_pos, const SceneParams& scene) { return renderer_for(scene)->render(gripper_pos); }

void write_png(const std::filesystem::path& path, const ObsImage& img) {
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, nullptr);
        std::fclose(fp);
        throw std::runtime_error("libpng init failed for " + path.string());
    }
    const std::vector<std::uint8_t> rgb = img.to_rgb8();
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("png write failed: " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y)
        png_write_row(png, const_cast<png_bytep>(rgb.data() + static_cast<std::ptrdiff_t>(y) * img.width * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fclose(fp) != 0) throw std::runtime_error("png close failed: " + path.string());
}

ObsImage read_png(const std::filesystem::path& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        std::fclose(fp);
        throw std::runtime_error("libpng init failed for " + path.string());
    }
    std::vector<std::uint8_t> rgb;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("png read failed: " + path.string());
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("expected 8-bit RGB png: " + path.string());
    }
    rgb.resize(static_cast<std::size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y) png_read_row(png, rgb.data() + static_cast<std::ptrdiff_t>(y) * w * 3, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return ObsImage::from_rgb8(w, h, rgb);
}

namespace {

nlohmann::json manifest_json(const DatasetManifest& m) {
    nlohmann::json j;
    j["format_version"] = m.format_version;
    j["n_rows"] = m.n_rows;
    j["n_cols"] = m.n_cols;
    j["cell_mm"] = m.cell_mm;
    j["image_width"] = m.image_width;
    j["image_height"] = m.image_height;
    j["texture_seed"] = m.texture_seed;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : m.entries)
        j["entries"].push_back({{"row", e.row}, {"col", e.col}, {"x_mm", e.x_mm}, {"y_mm", e.y_mm}, {"file", e.file}});
    return j;
}

}  // namespace

DatasetManifest render_grid_dataset(const GridMap& map, const SceneParams& scene, const std::filesystem::path& out_dir) {
    map.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());
    auto r = renderer_for(scene);

    DatasetManifest m;
    m.n_rows = map.n_rows;
    m.n_cols = map.n_cols;
    m.cell_mm = map.cell_mm;
    m.image_width = scene.image_width;
    m.image_height = scene.image_height;
    m.texture_seed = scene.texture_seed;
    std::vector<ObsImage> images(map.size());
#pragma omp parallel for schedule(static)
    for (int i = 0; i < map.size(); ++i) images[i] = r->render(map.coords(map.unflat(i)));
    for (int i = 0; i < map.size(); ++i) {
        const GridIndex g = map.unflat(i);
        const Vec2Mm p = map.coords(g);
        ManifestEntry e{g.row, g.col, p.x, p.y, "r" + std::to_string(g.row) + "_c" + std::to_string(g.col) + ".png"};
        write_png(out_dir / e.file, images[i]);
        m.entries.push_back(e);
    }
    std::ofstream os(out_dir / "manifest.json");
    os << manifest_json(m).dump(2) << '\n';
    if (!os) throw std::runtime_error("cannot write " + (out_dir / "manifest.json").string());
    return m;
}

DatasetManifest load_manifest(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw std::runtime_error("cannot read " + (dir / "manifest.json").string());
    nlohmann::json j;
    try {
        is >> j;
        DatasetManifest m;
        m.format_version = j.at("format_version").get<int>();
        if (m.format_version != 1) throw std::runtime_error("unsupported manifest format_version");
        m.n_rows = j.at("n_rows").get<int>();
        m.n_cols = j.at("n_cols").get<int>();
        m.cell_mm = j.at("cell_mm").get<double>();
        m.image_width = j.at("image_width").get<int>();
        m.image_height = j.at("image_height").get<int>();
        m.texture_seed = j.at("texture_seed").get<std::uint64_t>();
        for (const auto& e : j.at("entries"))
            m.entries.push_back({e.at("row").get<int>(), e.at("col").get<int>(), e.at("x_mm").get<double>(),
                                 e.at("y_mm").get<double>(), e.at("file").get<std::string>()});
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed manifest in " + dir.string() + ": " + e.what());
    }
}

std::vector<ObsImage> load_grid_images(const std::filesystem::path& dir, const DatasetManifest& manifest) {
    std::vector<ObsImage> out;
    out.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) {
        ObsImage img = read_png(dir / e.file);
        if (img.width != manifest.image_width || img.height != manifest.image_height)
            throw std::runtime_error("image size mismatch in " + (dir / e.file).string());
        out.push_back(std::move(img));
    }
    return out;
}

}  // namespace gearlab
