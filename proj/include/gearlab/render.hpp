#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "gearlab/core.hpp"

namespace gearlab {

// RGB image, row-major, channel-interleaved (HWC), values in [0, 1]. Row 0 is
// the top of the view (largest y).
struct ObsImage {
    int width = 0;
    int height = 0;
    static constexpr int channels = 3;
    std::vector<float> pixels;

    float at(int row, int col, int ch) const { return pixels[(static_cast<std::size_t>(row) * width + col) * 3 + ch]; }
    std::vector<std::uint8_t> to_rgb8() const;
    static ObsImage from_rgb8(int width, int height, const std::vector<std::uint8_t>& rgb);
    bool operator==(const ObsImage&) const = default;
};

struct SceneParams {
    Vec2Mm peg_mm{17.5, 15.0};  // peg center in the map frame
    double platform_radius_mm = 30.0;
    double peg_radius_mm = 3.0;
    double occluder_radius_mm = 10.0;
    std::uint64_t texture_seed = 7;
    double view_window_mm = 40.0;
    Vec2Mm mounted_gear_offset_mm{-15.0, -15.5};  // relative to the peg
    int mounted_gear_teeth = 20;
    double mounted_gear_radius_mm = 11.0;
    int image_width = 64;
    int image_height = 64;

    void validate() const;
    std::string canonical() const;  // stable text form, hashed into configs
};

// Platform-frame texture, built once per scene and sampled bilinearly.
class SceneRenderer {
public:
    explicit SceneRenderer(const SceneParams& scene);

    ObsImage render(Vec2Mm gripper) const;
    // Writes channel-planar floats [3, H, W] straight into a network input.
    void render_chw(Vec2Mm gripper, float* out) const;
    const SceneParams& scene() const { return scene_; }

    // Layer stack without the occluder, at a platform-frame point.
    std::array<float, 3> shade(Vec2Mm p) const;

private:
    std::array<float, 3> sample(double x, double y) const;
    template <class Emit>
    void raster(Vec2Mm gripper, Emit&& emit) const;

    SceneParams scene_;
    double res_ = 6.0;  // atlas samples per mm
    double x0_ = 0, y0_ = 0;
    int aw_ = 0, ah_ = 0;
    std::vector<float> atlas_;
    struct Wave {
        double kx, ky, phase;
        std::array<double, 3> gain;
    };
    std::vector<Wave> background_, platform_;
};

// Shared renderer for a scene (cached by canonical text).
std::shared_ptr<const SceneRenderer> renderer_for(const SceneParams& scene);

ObsImage render_observation(Vec2Mm gripper_pos, const SceneParams& scene);

struct ManifestEntry {
    int row = 0, col = 0;
    double x_mm = 0, y_mm = 0;
    std::string file;
};

struct DatasetManifest {
    int format_version = 1;
    int n_rows = 0, n_cols = 0;
    double cell_mm = 0;
    int image_width = 0, image_height = 0;
    std::uint64_t texture_seed = 0;
    std::vector<ManifestEntry> entries;
};

DatasetManifest render_grid_dataset(const GridMap& map, const SceneParams& scene, const std::filesystem::path& out_dir);
DatasetManifest load_manifest(const std::filesystem::path& dir);
// One image per manifest entry, same order.
std::vector<ObsImage> load_grid_images(const std::filesystem::path& dir, const DatasetManifest& manifest);

void write_png(const std::filesystem::path& path, const ObsImage& img);
ObsImage read_png(const std::filesystem::path& path);

}  // namespace gearlab
