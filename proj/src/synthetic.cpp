#include "contactsense/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "contactsense/errors.hpp"

namespace contactsense {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kMinContactSpacingMs = 500.0;
constexpr double kNoiseQ = 3e-4;
constexpr double kNoiseQd = 5e-3;
constexpr double kNoiseTau = 0.3;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(seed ^ splitmix64(a)) ^ splitmix64(b + 0x2545f4914f6cdd1dULL));
}

struct MotionParams {
  JointVec amplitude{};
  JointVec freq_hz{};
  JointVec phase{};
  JointVec center{};
  JointVec inertia{};
  JointVec gravity{};
};

MotionParams make_motion(std::uint64_t motion_seed, int motion_id) {
  std::mt19937_64 rng(derive(motion_seed, static_cast<std::uint64_t>(motion_id)));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  MotionParams m;
  for (int j = 0; j < kNumJoints; ++j) {
    m.amplitude[static_cast<std::size_t>(j)] = 0.2 + 0.4 * uni(rng);
    m.freq_hz[static_cast<std::size_t>(j)] = 0.1 + 0.25 * uni(rng);
    m.phase[static_cast<std::size_t>(j)] = 2.0 * kPi * uni(rng);
    m.center[static_cast<std::size_t>(j)] = -1.0 + 2.0 * uni(rng);
    m.inertia[static_cast<std::size_t>(j)] = 2.0 + 4.0 * uni(rng);
    m.gravity[static_cast<std::size_t>(j)] = -3.0 + 6.0 * uni(rng);
  }
  return m;
}

// Contact direction in joint space for one (motion, setup) placement; all
// components positive so class amplitude ordering survives averaging.
struct ContactDirections {
  JointVec position{};
  JointVec torque{};
};

ContactDirections make_directions(std::uint64_t motion_seed, int motion_id, int setup_id) {
  std::mt19937_64 rng(
      derive(motion_seed ^ 0xd1ec7104ULL, static_cast<std::uint64_t>(motion_id) * 97 +
                                              static_cast<std::uint64_t>(setup_id)));
  std::uniform_real_distribution<double> uni(0.3, 1.0);
  ContactDirections d;
  for (int j = 0; j < kNumJoints; ++j) {
    d.position[static_cast<std::size_t>(j)] = uni(rng);
    d.torque[static_cast<std::size_t>(j)] = uni(rng);
  }
  return d;
}

struct SecondOrder {
  double omega_n = 0.0;
  double zeta = 0.0;
  double eq_fraction = 0.0;  // K_r / (K_r + k_e)
};

SecondOrder contact_dynamics(const SyntheticConfig& config, ClassLabel label) {
  const double k_e = config.stiffness[static_cast<std::size_t>(label)];
  const double d_e = config.damping[static_cast<std::size_t>(label)];
  SecondOrder s;
  s.omega_n = std::sqrt((config.robot_stiffness + k_e) / config.effective_mass);
  s.zeta = (config.robot_damping + d_e) / (2.0 * config.effective_mass * s.omega_n);
  s.eq_fraction = config.robot_stiffness / (config.robot_stiffness + k_e);
  return s;
}

}  // namespace

void SyntheticConfig::validate() const {
  if (!(stiffness[static_cast<std::size_t>(ClassLabel::Human)] <
            stiffness[static_cast<std::size_t>(ClassLabel::PVC)] &&
        stiffness[static_cast<std::size_t>(ClassLabel::PVC)] <
            stiffness[static_cast<std::size_t>(ClassLabel::Aluminum)]))
    throw UsageError("synthetic: stiffness must be ordered Human < PVC < Aluminum");
  for (double k : stiffness)
    if (k <= 0.0) throw UsageError("synthetic: stiffness must be positive");
  for (double d : damping)
    if (d < 0.0) throw UsageError("synthetic: damping must be >= 0");
  if (robot_stiffness <= 0.0 || effective_mass <= 0.0)
    throw UsageError("synthetic: robot stiffness and mass must be positive");
  for (int c = 0; c < kNumClasses; ++c) {
    const SecondOrder s = contact_dynamics(*this, static_cast<ClassLabel>(c));
    if (s.zeta >= 1.0)
      throw UsageError("synthetic: class " + std::string(to_string(static_cast<ClassLabel>(c))) +
                       " is not underdamped (zeta >= 1)");
  }
  for (int n : recordings_per_class)
    if (n < 0) throw UsageError("synthetic: negative recording count");
  if (contacts_per_recording < 1 ||
      contacts_per_recording > static_cast<int>(contact_schedule_ms.size()))
    throw UsageError("synthetic: contacts_per_recording exceeds the schedule");
  if (num_motions < 1 || num_setups < 1) throw UsageError("synthetic: bad motion/setup counts");
  if (noise_std < 0.0) throw UsageError("synthetic: noise_std must be >= 0");
  if (approach_speed <= 0.0 || approach_speed_jitter < 0.0 || approach_speed_jitter >= 1.0)
    throw UsageError("synthetic: bad approach speed");
  if (press_ramp_ms < kPeriodMs || press_hold_ms < 0 || press_release_ms < 0)
    throw UsageError("synthetic: bad press profile");

  for (std::size_t i = 0; i + 1 < contact_schedule_ms.size(); ++i) {
    const double gap = static_cast<double>(contact_schedule_ms[i + 1] - contact_schedule_ms[i]) -
                       2.0 * contact_jitter_ms;
    if (gap < kMinContactSpacingMs)
      throw UsageError("synthetic: contacts scheduled closer than " +
                       std::to_string(static_cast<int>(kMinContactSpacingMs)) + " ms apart");
  }
  for (std::int64_t t : contact_schedule_ms)
    if (t - contact_jitter_ms < kWindowSpanMs ||
        t + contact_jitter_ms + press_duration_ms() > duration_ms)
      throw UsageError("synthetic: contact schedule leaves no room for windows");
}

SyntheticConfig SyntheticConfig::train_defaults() { return {}; }

SyntheticConfig SyntheticConfig::validation_defaults() {
  SyntheticConfig config;
  config.recordings_per_class = {18, 9, 13};
  config.seed = 1;
  return config;
}

double unit_step_response(double omega_n, double zeta, double t) {
  if (t <= 0.0) return 0.0;
  const double omega_d = omega_n * std::sqrt(1.0 - zeta * zeta);
  const double decay = std::exp(-zeta * omega_n * t);
  return 1.0 - decay * (std::cos(omega_d * t) + zeta * omega_n / omega_d * std::sin(omega_d * t));
}

double unit_ramp_response(double omega_n, double zeta, double t) {
  if (t <= 0.0) return 0.0;
  const double omega_d = omega_n * std::sqrt(1.0 - zeta * zeta);
  const double decay = std::exp(-zeta * omega_n * t);
  return t - 2.0 * zeta / omega_n +
         decay * (2.0 * zeta / omega_n * std::cos(omega_d * t) -
                  (1.0 - 2.0 * zeta * zeta) / omega_d * std::sin(omega_d * t));
}

ContactResponse contact_response(const SyntheticConfig& config, ClassLabel label, double v0,
                                 double t_since_contact) {
  const SecondOrder dyn = contact_dynamics(config, label);
  const double t1 = config.press_ramp_ms * 1e-3;
  const double t2 = t1 + config.press_hold_ms * 1e-3;
  const double t3 = t2 + config.press_release_ms * 1e-3;
  const double t = t_since_contact;

  ContactResponse r;
  if (t < 0.0 || t >= t3) return r;

  const auto ramp = [](double x) { return x > 0.0 ? x : 0.0; };
  const auto step = [](double x) { return x > 0.0 ? 1.0 : 0.0; };
  r.commanded = v0 * (ramp(t) - ramp(t - t1) - ramp(t - t2) + ramp(t - t3));
  r.commanded_rate = v0 * (step(t) - step(t - t1) - step(t - t2) + step(t - t3));

  const auto R = [&](double x) { return unit_ramp_response(dyn.omega_n, dyn.zeta, x); };
  const auto S = [&](double x) { return unit_step_response(dyn.omega_n, dyn.zeta, x); };
  const double scale = dyn.eq_fraction * v0;
  r.penetration = scale * (R(t) - R(t - t1) - R(t - t2) + R(t - t3));
  r.penetration_rate = scale * (S(t) - S(t - t1) - S(t - t2) + S(t - t3));

  const double k_e = config.stiffness[static_cast<std::size_t>(label)];
  const double d_e = config.damping[static_cast<std::size_t>(label)];
  r.force = std::max(0.0, k_e * r.penetration + d_e * r.penetration_rate);
  return r;
}

namespace {

Recording generate_recording(const SyntheticConfig& config, ClassLabel label, int rec_index,
                             int class_index) {
  std::mt19937_64 rng(derive(config.seed, static_cast<std::uint64_t>(rec_index)));
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Recording rec;
  char id[64];
  std::snprintf(id, sizeof(id), "%s_%03d", config.id_prefix.c_str(), rec_index);
  rec.id = id;
  rec.label = label;
  rec.motion_id = class_index % config.num_motions;
  rec.setup_id = (class_index / config.num_motions) % config.num_setups;

  const MotionParams motion = make_motion(config.motion_seed, rec.motion_id);
  const ContactDirections dirs = make_directions(config.motion_seed, rec.motion_id, rec.setup_id);

  struct PlannedContact {
    std::int64_t t_ms = 0;
    double v0 = 0.0;
  };
  std::vector<PlannedContact> contacts;
  for (int k = 0; k < config.contacts_per_recording; ++k) {
    PlannedContact pc;
    const double jitter = uni(rng) * config.contact_jitter_ms;
    pc.t_ms = config.contact_schedule_ms[static_cast<std::size_t>(k)] +
              kPeriodMs * std::llround(jitter / kPeriodMs);
    pc.v0 = config.approach_speed * (1.0 + config.approach_speed_jitter * uni(rng));
    contacts.push_back(pc);
  }

  const int n_samples = config.duration_ms / kPeriodMs;
  rec.samples.reserve(static_cast<std::size_t>(n_samples));
  const std::int64_t press_ms = config.press_duration_ms();

  for (int i = 0; i < n_samples; ++i) {
    Sample s;
    s.t_ms = static_cast<std::int64_t>(i) * kPeriodMs;
    const double t = s.t_ms * 1e-3;

    for (int j = 0; j < kNumJoints; ++j) {
      const std::size_t ji = static_cast<std::size_t>(j);
      const double w = 2.0 * kPi * motion.freq_hz[ji];
      const double angle = w * t + motion.phase[ji];
      s.q_desired[ji] = motion.center[ji] + motion.amplitude[ji] * std::sin(angle);
      s.qdot_desired[ji] = motion.amplitude[ji] * w * std::cos(angle);
      const double qdd = -motion.amplitude[ji] * w * w * std::sin(angle);
      s.q_actual[ji] = s.q_desired[ji];
      s.qdot_actual[ji] = s.qdot_desired[ji];
      s.tau[ji] = motion.inertia[ji] * qdd + motion.gravity[ji];
    }

    for (const PlannedContact& pc : contacts) {
      if (s.t_ms < pc.t_ms || s.t_ms >= pc.t_ms + press_ms) continue;
      const ContactResponse cr =
          contact_response(config, label, pc.v0, (s.t_ms - pc.t_ms) * 1e-3);
      const double lag = cr.commanded - cr.penetration;
      const double lag_rate = cr.commanded_rate - cr.penetration_rate;
      for (int j = 0; j < kNumJoints; ++j) {
        const std::size_t ji = static_cast<std::size_t>(j);
        s.q_actual[ji] -= dirs.position[ji] * lag * config.position_gain;
        s.qdot_actual[ji] -= dirs.position[ji] * lag_rate * config.position_gain;
        s.tau[ji] += dirs.torque[ji] * cr.force * config.torque_gain;
      }
      s.contact = true;
    }

    for (int j = 0; j < kNumJoints; ++j) {
      const std::size_t ji = static_cast<std::size_t>(j);
      s.q_actual[ji] += config.noise_std * kNoiseQ * gauss(rng);
      s.qdot_actual[ji] += config.noise_std * kNoiseQd * gauss(rng);
      s.tau[ji] += config.noise_std * kNoiseTau * gauss(rng);
    }
    rec.samples.push_back(s);
  }
  return rec;
}

}  // namespace

std::vector<Recording> generate(const SyntheticConfig& config) {
  config.validate();
  std::vector<Recording> out;
  int rec_index = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    for (int i = 0; i < config.recordings_per_class[static_cast<std::size_t>(c)]; ++i) {
      out.push_back(generate_recording(config, static_cast<ClassLabel>(c), rec_index, i));
      ++rec_index;
    }
  }
  return out;
}

}  // namespace contactsense
