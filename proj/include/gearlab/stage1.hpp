#pragma once

#include "gearlab/core.hpp"

namespace gearlab {

struct BBoxObservation {
    double center_u = 0.0;
    double center_v = 0.0;
    double depth = 0.0;  // meters
};

struct NoiseModel {
    double sigma_px = 4.0;
    double sigma_depth = 0.003;  // meters
    void validate() const;
};

struct ContactParams {
    double f_z_threshold = 2.0;  // N
    double surface_z = 0.0;      // mm
    double stiffness = 1.0;      // N/mm
    double descent_step = 0.5;   // mm
    int max_steps = 1000;
    bool surface_present = true;
    void validate() const;
};

struct Stage1Config {
    CameraIntrinsics camera;
    NoiseModel noise;
    ContactParams contact;
    Vec3 true_peg{0.01, -0.005, 0.5};          // camera frame, meters
    Vec3 platform_offset{0.02, -0.01, 0.0};    // platform center minus peg, meters
    double approach_z_mm = 10.0;               // gripper height above the surface before descent
};

class Stage1Timeout : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Noisy detector stand-in: the true platform center projected to pixels.
BBoxObservation detect_platform(const Vec3& platform_center, const CameraIntrinsics& K, const NoiseModel& noise, Rng& rng);

// Projects the platform, perturbs (u, v, depth), deprojects and subtracts the
// known platform-to-peg offset.
Vec3 localize_peg(const Vec3& true_peg, const CameraIntrinsics& K, const NoiseModel& noise, Rng& rng,
                  const Vec3& platform_offset = Stage1Config{}.platform_offset);

struct ContactResult {
    double final_z = 0.0;
    double fz = 0.0;
    int steps = 0;
};

// Steps down by descent_step until the spring force exceeds the threshold.
// Throws ContractViolation if start_z <= surface_z and Stage1Timeout when
// max_steps pass without contact.
ContactResult descend_until_contact(double start_z, const ContactParams& contact);

// Gripper start for stage 2: the localization error expressed around the
// map target, clamped into the map.
Vec2Mm stage2_start(Vec2Mm true_peg_xy, Vec2Mm estimate_xy, const GridMap& map);

}  // namespace gearlab
