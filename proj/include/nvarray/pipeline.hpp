#pragma once

// Config-driven runs that chain the modules into experiments, write
// CSV/JSON outputs with a digest manifest, and render the text report.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nvarray/aberration.hpp"
#include "nvarray/coherence.hpp"
#include "nvarray/fabrication.hpp"
#include "nvarray/geometry.hpp"
#include "nvarray/imaging.hpp"
#include "nvarray/photonstats.hpp"

namespace nvarray {

inline constexpr const char* kToolkitName = "nvarray";
inline constexpr const char* kToolkitVersion = "0.1.0";

struct PlanConfig {
  ChipSpec chip;
  double capacity_pitch_um = 10.0;
  int qubits_per_nvc = 5;
  ArrayPlan array;
};

struct FabricationConfig {
  MaterialSpec material;
  FabricationParams params;
  int rewrite_max_rounds = 100;
};

struct ImagingConfig {
  PsfModel psf;
  /// Take the PSF sigmas from the scalar focus at the excitation wavelength.
  bool psf_from_focus = true;
  double excitation_wavelength_nm = 532.0;
  Vec3 voxel_pitch_nm{50.0, 50.0, 150.0};
  std::array<int, 3> dims{25, 25, 41};
  double dwell_s = 1e-3;
  std::size_t max_sites = 0;  // 0 = every single-NVC site
};

struct HbtConfig {
  EmitterModel emitter;  // k is replaced by each site's multiplicity
  double duration_s = 2.0;
  double bin_width_ns = 1.0;
  double window_ns = 100.0;
  bool dip_fit = true;
  std::size_t max_sites = 200;  // 0 = every occupied site
  double example_stream_s = 0.01;
};

struct CoherenceConfig {
  /// Solve (b, tau_c) for the echo time and stretch below; otherwise use `noise`.
  bool calibrate = true;
  double echo_time_s = 690e-6;
  double stretch = 2.0;
  NoiseModel noise{0.0, 1e-3, 3e-3};
  /// Log-normal spread of b between sites.
  double bath_spread = 0.5;
  std::size_t max_sites = 23;
  int points = 25;
  double t_min_s = 20e-6;
  double t_max_s = 2e-3;
  long long shots = 20000;
  int xy8_blocks = 4;
  double xy8_t_max_s = 8e-3;
  double t1_t_max_s = 12e-3;
  double threshold_s = 500e-6;
};

struct AberrationConfig {
  FocusConfig focus;
  std::vector<double> depths_um = {6, 9, 12, 15};
  int profile_points = 401;
};

struct RunConfig {
  std::uint64_t master_seed = 20211;
  std::string experiment = "full-pipeline";
  std::filesystem::path output_dir = "out";
  int parallelism = 1;
  PlanConfig plan;
  FabricationConfig fabrication;
  ImagingConfig imaging;
  HbtConfig hbt;
  CoherenceConfig coherence;
  AberrationConfig aberration;
};

/// Experiments accepted by run().
const std::vector<std::string>& experiments();

/// Defaults overlaid with `j`. Unknown keys and wrongly typed values are
/// rejected with the dotted key in the message.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& c);

/// Sets `key` (dotted path) to `value`, parsed as JSON when possible and as a
/// string otherwise.
void apply_override(nlohmann::json& config, const std::string& assignment);

/// Checks every module precondition; throws std::invalid_argument naming the field.
void validate(const RunConfig& c);

struct StageTiming {
  std::string stage;
  double wall_s = 0.0;
};

struct OutputFile {
  std::string path;  // relative to the output directory
  std::string sha256;
  std::uintmax_t bytes = 0;
};

struct RunManifest {
  nlohmann::json config;
  std::vector<StageTiming> stages;
  std::vector<OutputFile> outputs;
};

nlohmann::json to_json(const RunManifest& m);

/// Runs the configured experiment, writing outputs and manifest.json into
/// output_dir. Progress lines go to `log` when given.
RunManifest run(const RunConfig& config, std::ostream* log = nullptr);

/// Summary JSON documents the report is built from, keyed by stage.
using ReportInputs = std::map<std::string, nlohmann::json>;

/// Reads the persisted stage outputs present in `dir`.
ReportInputs load_report_inputs(const std::filesystem::path& dir);

/// One table per experiment; stages without outputs are marked "not run".
std::string render_report(const ReportInputs& inputs);

}  // namespace nvarray
