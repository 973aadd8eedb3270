#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "contactsense/types.hpp"

namespace contactsense {

// Lumped contact model: a joint-space impedance (robot_stiffness,
// robot_damping, effective_mass) pressing into a class-dependent
// spring-damper environment. A contact commands a trapezoidal penetration
// u(t) at approach speed v0; the realized penetration p(t) is the closed-form
// second-order response with
//   omega_n = sqrt((K_r + k_e) / m),  zeta = (d_r + d_e) / (2 m omega_n),
//   equilibrium fraction c = K_r / (K_r + k_e),
// and the sensed force is k_e*p + d_e*p_dot (clamped at 0). Soft contacts
// produce small, slow, heavily damped transients; stiff contacts produce
// large, fast, ringing ones.
struct SyntheticConfig {
  // Indexed by ClassLabel (Human, Aluminum, PVC). Defaults keep the
  // 1 : 680 : 34 stiffness ratios of soft tissue vs aluminum vs PVC.
  std::array<double, kNumClasses> stiffness = {150.0, 102000.0, 5100.0};
  std::array<double, kNumClasses> damping = {40.0, 90.0, 60.0};
  double robot_stiffness = 3000.0;
  double robot_damping = 8.0;
  double effective_mass = 1.0;

  // Master sensor-noise scale; per-channel sigmas are
  // position 3e-4, velocity 5e-3, torque 0.3, each times noise_std.
  double noise_std = 1.0;

  std::array<int, kNumClasses> recordings_per_class = {28, 27, 30};
  int contacts_per_recording = 3;
  int num_motions = 5;
  int num_setups = 6;
  int duration_ms = 4000;
  std::vector<std::int64_t> contact_schedule_ms = {1000, 2000, 3000};
  int contact_jitter_ms = 100;

  double approach_speed = 0.05;       // m/s
  double approach_speed_jitter = 0.3; // relative, uniform
  int press_ramp_ms = 100;
  int press_hold_ms = 200;
  int press_release_ms = 100;

  double position_gain = 1.0;  // joint deflection per meter of tracking error
  double torque_gain = 0.8;    // joint torque per newton of contact force

  std::uint64_t seed = 0;
  std::uint64_t motion_seed = 0x6d6f74696f6e73ULL;  // motion library, shared across sets
  std::string id_prefix = "rec";

  int press_duration_ms() const { return press_ramp_ms + press_hold_ms + press_release_ms; }
  void validate() const;  // throws UsageError; contacts closer than 500 ms are rejected

  static SyntheticConfig train_defaults();       // 84/81/90 contacts (28/27/30 recordings)
  static SyntheticConfig validation_defaults();  // 54/27/39 contacts (18/9/13 recordings)
};

// Closed-form unit step/ramp responses of the underdamped second-order
// system (0 for t < 0); building blocks of the contact transient.
double unit_step_response(double omega_n, double zeta, double t);
double unit_ramp_response(double omega_n, double zeta, double t);

struct ContactResponse {
  double commanded = 0.0;         // u(t)
  double commanded_rate = 0.0;    // u'(t)
  double penetration = 0.0;       // p(t)
  double penetration_rate = 0.0;  // p'(t)
  double force = 0.0;             // max(0, k_e p + d_e p')
};

// Transient at t_since_contact seconds after onset for one class.
ContactResponse contact_response(const SyntheticConfig& config, ClassLabel label, double v0,
                                 double t_since_contact);

// Deterministic per seed. Recordings follow smooth per-motion joint
// trajectories with perfect tracking outside contacts; the contact flag is
// set while the commanded penetration is positive.
std::vector<Recording> generate(const SyntheticConfig& config);

}  // namespace contactsense
