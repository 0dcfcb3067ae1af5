#include "gearlab/stage1.hpp"

#include <cmath>
#include <string>

namespace gearlab {

void NoiseModel::validate() const {
    if (!(sigma_px >= 0 && sigma_depth >= 0)) throw std::invalid_argument("noise sigmas must be non-negative");
}

void ContactParams::validate() const {
    if (!(f_z_threshold > 0)) throw std::invalid_argument("f_z_threshold must be positive");
    if (!(stiffness > 0)) throw std::invalid_argument("stiffness must be positive");
    if (!(descent_step > 0)) throw std::invalid_argument("descent_step must be positive");
    if (max_steps < 1) throw std::invalid_argument("contact max_steps must be at least 1");
}

BBoxObservation detect_platform(const Vec3& platform_center, const CameraIntrinsics& K, const NoiseModel& noise, Rng& rng) {
    const Vec3 uvd = project(platform_center, K);
    BBoxObservation b{uvd[0] + noise.sigma_px * rng.normal(), uvd[1] + noise.sigma_px * rng.normal(),
                      uvd[2] + noise.sigma_depth * rng.normal()};
    return b;
}

Vec3 localize_peg(const Vec3& true_peg, const CameraIntrinsics& K, const NoiseModel& noise, Rng& rng,
                  const Vec3& platform_offset) {
    noise.validate();
    const Vec3 platform{true_peg[0] + platform_offset[0], true_peg[1] + platform_offset[1], true_peg[2] + platform_offset[2]};
    const BBoxObservation b = detect_platform(platform, K, noise, rng);
    return peg_from_platform(deproject(b.center_u, b.center_v, b.depth, K), platform_offset);
}

ContactResult descend_until_contact(double start_z, const ContactParams& contact) {
    contact.validate();
    if (!(start_z > contact.surface_z))
        throw ContractViolation("descent must start above the surface (start_z=" + std::to_string(start_z) + ")");
    ContactResult r{start_z, 0.0, 0};
    while (r.steps < contact.max_steps) {
        ++r.steps;
        r.final_z = start_z - r.steps * contact.descent_step;
        r.fz = contact.surface_present ? contact.stiffness * std::max(0.0, contact.surface_z - r.final_z) : 0.0;
        if (r.fz > contact.f_z_threshold) return r;
    }
    throw Stage1Timeout("no contact force above " + std::to_string(contact.f_z_threshold) + " N after " +
                        std::to_string(contact.max_steps) + " descent steps");
}

Vec2Mm stage2_start(Vec2Mm true_peg_xy, Vec2Mm estimate_xy, const GridMap& map) {
    return clamp_to_map(map.target() + (estimate_xy - true_peg_xy), map);
}

}  // namespace gearlab
