#include "nvarray/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <locale>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "nvarray/io.hpp"
#include "nvarray/rng.hpp"
#include "nvarray/stats.hpp"

namespace nvarray {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Keys accepted in a config although the defaults do not list them.
const std::set<std::string> kExtraKeys = {
    "fabrication.params.calibration.occupancy",
    "fabrication.params.calibration.reference_nj",
};

void check_keys(const json& user, const json& defaults, const std::string& prefix) {
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!defaults.contains(key)) {
      if (kExtraKeys.count(path)) continue;
      throw std::invalid_argument(path + ": unknown config key");
    }
    const auto& d = defaults.at(key);
    if (d.is_object()) {
      if (!value.is_object()) throw std::invalid_argument(path + ": expected a block of keys");
      check_keys(value, d, path);
    }
  }
}

template <typename T>
T read_block(const json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(key + ": " + e.what());
  }
}

template <typename F>
void in_block(const std::string& block, F&& check) {
  try {
    check();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(block + ": " + e.what());
  }
}

[[noreturn]] void reject(const std::string& field, const std::string& why) {
  throw std::invalid_argument(field + ": " + why);
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string percent(double fraction, int digits = 1) { return fixed(100.0 * fraction, digits) + "%"; }

std::string depth_tag(double depth_um) { return io::format_number(depth_um) + "um"; }

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

const std::vector<std::string>& experiments() {
  static const std::vector<std::string> names = {"plan",      "fabricate",  "image",        "hbt",
                                                 "coherence", "aberration", "full-pipeline"};
  return names;
}

nlohmann::json config_to_json(const RunConfig& c) {
  return {{"master_seed", c.master_seed},
          {"experiment", c.experiment},
          {"output_dir", c.output_dir.string()},
          {"parallelism", c.parallelism},
          {"plan",
           {{"chip", c.plan.chip},
            {"capacity_pitch_um", c.plan.capacity_pitch_um},
            {"qubits_per_nvc", c.plan.qubits_per_nvc},
            {"array", c.plan.array}}},
          {"fabrication",
           {{"material", c.fabrication.material},
            {"params", c.fabrication.params},
            {"rewrite_max_rounds", c.fabrication.rewrite_max_rounds}}},
          {"imaging",
           {{"psf", c.imaging.psf},
            {"psf_from_focus", c.imaging.psf_from_focus},
            {"excitation_wavelength_nm", c.imaging.excitation_wavelength_nm},
            {"voxel_pitch_nm", io::to_json(c.imaging.voxel_pitch_nm)},
            {"dims", c.imaging.dims},
            {"dwell_s", c.imaging.dwell_s},
            {"max_sites", c.imaging.max_sites}}},
          {"hbt",
           {{"emitter", c.hbt.emitter},
            {"duration_s", c.hbt.duration_s},
            {"bin_width_ns", c.hbt.bin_width_ns},
            {"window_ns", c.hbt.window_ns},
            {"dip_fit", c.hbt.dip_fit},
            {"max_sites", c.hbt.max_sites},
            {"example_stream_s", c.hbt.example_stream_s}}},
          {"coherence",
           {{"calibrate", c.coherence.calibrate},
            {"echo_time_s", c.coherence.echo_time_s},
            {"stretch", c.coherence.stretch},
            {"noise", c.coherence.noise},
            {"bath_spread", c.coherence.bath_spread},
            {"max_sites", c.coherence.max_sites},
            {"points", c.coherence.points},
            {"t_min_s", c.coherence.t_min_s},
            {"t_max_s", c.coherence.t_max_s},
            {"shots", c.coherence.shots},
            {"xy8_blocks", c.coherence.xy8_blocks},
            {"xy8_t_max_s", c.coherence.xy8_t_max_s},
            {"t1_t_max_s", c.coherence.t1_t_max_s},
            {"threshold_s", c.coherence.threshold_s}}},
          {"aberration",
           {{"focus", c.aberration.focus},
            {"depths_um", c.aberration.depths_um},
            {"profile_points", c.aberration.profile_points}}}};
}

RunConfig config_from_json(const nlohmann::json& user) {
  if (!user.is_object()) throw std::invalid_argument("config: expected a JSON object");
  const RunConfig defaults;
  json j = config_to_json(defaults);
  check_keys(user, j, "");
  j.merge_patch(user);

  RunConfig c;
  c.master_seed = read_block<std::uint64_t>(j, "master_seed");
  c.experiment = read_block<std::string>(j, "experiment");
  c.output_dir = read_block<std::string>(j, "output_dir");
  c.parallelism = read_block<int>(j, "parallelism");

  const auto& p = j.at("plan");
  in_block("plan", [&] {
    c.plan.chip = read_block<ChipSpec>(p, "chip");
    c.plan.capacity_pitch_um = read_block<double>(p, "capacity_pitch_um");
    c.plan.qubits_per_nvc = read_block<int>(p, "qubits_per_nvc");
    c.plan.array = read_block<ArrayPlan>(p, "array");
  });
  const auto& f = j.at("fabrication");
  in_block("fabrication", [&] {
    c.fabrication.material = read_block<MaterialSpec>(f, "material");
    c.fabrication.params = read_block<FabricationParams>(f, "params");
    c.fabrication.rewrite_max_rounds = read_block<int>(f, "rewrite_max_rounds");
  });
  const auto& im = j.at("imaging");
  in_block("imaging", [&] {
    c.imaging.psf = read_block<PsfModel>(im, "psf");
    c.imaging.psf_from_focus = read_block<bool>(im, "psf_from_focus");
    c.imaging.excitation_wavelength_nm = read_block<double>(im, "excitation_wavelength_nm");
    try {
      c.imaging.voxel_pitch_nm = io::vec3_from_json(im.at("voxel_pitch_nm"));
    } catch (const std::exception& e) {
      reject("voxel_pitch_nm", e.what());
    }
    c.imaging.dims = read_block<std::array<int, 3>>(im, "dims");
    c.imaging.dwell_s = read_block<double>(im, "dwell_s");
    c.imaging.max_sites = read_block<std::size_t>(im, "max_sites");
  });
  const auto& h = j.at("hbt");
  in_block("hbt", [&] {
    c.hbt.emitter = read_block<EmitterModel>(h, "emitter");
    c.hbt.duration_s = read_block<double>(h, "duration_s");
    c.hbt.bin_width_ns = read_block<double>(h, "bin_width_ns");
    c.hbt.window_ns = read_block<double>(h, "window_ns");
    c.hbt.dip_fit = read_block<bool>(h, "dip_fit");
    c.hbt.max_sites = read_block<std::size_t>(h, "max_sites");
    c.hbt.example_stream_s = read_block<double>(h, "example_stream_s");
  });
  const auto& co = j.at("coherence");
  in_block("coherence", [&] {
    auto& cc = c.coherence;
    cc.calibrate = read_block<bool>(co, "calibrate");
    cc.echo_time_s = read_block<double>(co, "echo_time_s");
    cc.stretch = read_block<double>(co, "stretch");
    cc.noise = read_block<NoiseModel>(co, "noise");
    cc.bath_spread = read_block<double>(co, "bath_spread");
    cc.max_sites = read_block<std::size_t>(co, "max_sites");
    cc.points = read_block<int>(co, "points");
    cc.t_min_s = read_block<double>(co, "t_min_s");
    cc.t_max_s = read_block<double>(co, "t_max_s");
    cc.shots = read_block<long long>(co, "shots");
    cc.xy8_blocks = read_block<int>(co, "xy8_blocks");
    cc.xy8_t_max_s = read_block<double>(co, "xy8_t_max_s");
    cc.t1_t_max_s = read_block<double>(co, "t1_t_max_s");
    cc.threshold_s = read_block<double>(co, "threshold_s");
  });
  const auto& ab = j.at("aberration");
  in_block("aberration", [&] {
    c.aberration.focus = read_block<FocusConfig>(ab, "focus");
    c.aberration.depths_um = read_block<std::vector<double>>(ab, "depths_um");
    c.aberration.profile_points = read_block<int>(ab, "profile_points");
  });
  return c;
}

void apply_override(nlohmann::json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("--override: expected KEY=VALUE, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw std::invalid_argument("--override: empty path segment in '" + key + "'");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

void validate(const RunConfig& c) {
  const auto& names = experiments();
  if (std::find(names.begin(), names.end(), c.experiment) == names.end())
    reject("experiment", "unknown experiment '" + c.experiment + "'");
  if (c.parallelism < 1) reject("parallelism", "must be >= 1");
  if (c.output_dir.empty()) reject("output_dir", "must not be empty");

  in_block("plan", [&] {
    c.plan.chip.validate();
    if (!(c.plan.capacity_pitch_um > 0)) reject("capacity_pitch_um", "must be > 0");
    if (c.plan.qubits_per_nvc < 1) reject("qubits_per_nvc", "must be >= 1");
    c.plan.array.validate(c.fabrication.params.calibration.domain);
  });
  in_block("fabrication", [&] {
    c.fabrication.material.validate();
    c.fabrication.params.validate();
    if (c.fabrication.rewrite_max_rounds < 1) reject("rewrite_max_rounds", "must be >= 1");
  });
  in_block("imaging", [&] {
    c.imaging.psf.validate();
    if (!(c.imaging.excitation_wavelength_nm > 0)) reject("excitation_wavelength_nm", "must be > 0");
    VolumeSpec spec;
    spec.voxel_pitch_nm = c.imaging.voxel_pitch_nm;
    spec.dims = c.imaging.dims;
    spec.dwell_s = c.imaging.dwell_s;
    spec.validate();
  });
  in_block("hbt", [&] {
    EmitterModel m = c.hbt.emitter;
    m.k = 1;
    m.validate();
    if (!(c.hbt.duration_s > 0)) reject("duration_s", "must be > 0");
    if (!(c.hbt.bin_width_ns > 0)) reject("bin_width_ns", "must be > 0");
    if (!(c.hbt.window_ns >= c.hbt.bin_width_ns)) reject("window_ns", "must be >= bin_width_ns");
    if (!(c.hbt.example_stream_s >= 0)) reject("example_stream_s", "must be >= 0");
  });
  in_block("coherence", [&] {
    const auto& cc = c.coherence;
    if (cc.calibrate) {
      calibrate_bath(cc.echo_time_s, cc.stretch, cc.noise.t1_s);
    }
    cc.noise.validate();
    if (!(cc.bath_spread >= 0)) reject("bath_spread", "must be >= 0");
    if (cc.points < 5) reject("points", "must be >= 5");
    if (!(cc.t_min_s >= 0)) reject("t_min_s", "must be >= 0");
    if (!(cc.t_max_s > cc.t_min_s)) reject("t_max_s", "must exceed t_min_s");
    if (cc.shots < 1) reject("shots", "must be >= 1");
    if (cc.xy8_blocks < 1) reject("xy8_blocks", "must be >= 1");
    if (!(cc.xy8_t_max_s > cc.t_min_s)) reject("xy8_t_max_s", "must exceed t_min_s");
    if (!(cc.t1_t_max_s > cc.t_min_s)) reject("t1_t_max_s", "must exceed t_min_s");
    if (!(cc.threshold_s > 0)) reject("threshold_s", "must be > 0");
  });
  in_block("aberration", [&] {
    c.aberration.focus.validate();
    for (double d : c.aberration.depths_um)
      if (!(d >= 0)) reject("depths_um", "depths must be >= 0");
    if (c.aberration.profile_points < 2) reject("profile_points", "must be >= 2");
  });
}

nlohmann::json to_json(const RunManifest& m) {
  json stages = json::array(), outputs = json::array();
  for (const auto& s : m.stages) stages.push_back({{"stage", s.stage}, {"wall_s", s.wall_s}});
  for (const auto& o : m.outputs)
    outputs.push_back({{"path", o.path}, {"sha256", o.sha256}, {"bytes", o.bytes}});
  return {{"toolkit", kToolkitName},
          {"version", kToolkitVersion},
          {"config", m.config},
          {"stages", stages},
          {"outputs", outputs}};
}

namespace {

// Single writer for a run's output directory; remembers what it wrote.
class OutputSet {
 public:
  explicit OutputSet(fs::path dir) : dir_(std::move(dir)) {}

  void text(const std::string& name, const std::string& content) {
    io::write_text(dir_ / name, content);
    names_.insert(name);
  }
  void json_file(const std::string& name, const json& j) { text(name, j.dump(2) + "\n"); }
  template <typename Writer>
  void csv(const std::string& name, Writer&& writer) {
    std::ostringstream os;
    writer(os);
    text(name, os.str());
  }
  void record(const std::string& name) { names_.insert(name); }
  const fs::path& dir() const { return dir_; }

  std::vector<OutputFile> digests() const {
    std::vector<OutputFile> out;
    for (const auto& n : names_) {
      const fs::path p = dir_ / n;
      out.push_back({n, io::sha256_file(p), fs::file_size(p)});
    }
    return out;
  }

 private:
  fs::path dir_;
  std::set<std::string> names_;
};

struct RunState {
  std::vector<Site> sites;
  std::vector<EmitterSite> outcomes;
  ReportInputs report;
};

std::vector<std::size_t> pick_sites(const std::vector<EmitterSite>& outcomes, bool singles_only,
                                    std::size_t cap) {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto m = outcomes[i].multiplicity();
    if (singles_only ? m == 1 : m >= 1) ids.push_back(i);
    if (cap > 0 && ids.size() == cap) break;
  }
  return ids;
}

void stage_plan(const RunConfig& c, RunState& st, OutputSet& out) {
  st.sites = plan_sites(c.plan.array, c.fabrication.params.calibration.domain);
  const auto cap = capacity(c.plan.chip, c.plan.capacity_pitch_um, c.plan.qubits_per_nvc);
  out.csv("sites.csv", [&](std::ostream& os) { write_sites_csv(os, st.sites); });
  json plan{{"array", c.plan.array},
            {"site_count", st.sites.size()},
            {"chip", c.plan.chip},
            {"capacity",
             {{"pitch_um", c.plan.capacity_pitch_um},
              {"qubits_per_nvc", c.plan.qubits_per_nvc},
              {"nvc_sites", cap.nvc_sites},
              {"total_qubits", cap.total_qubits}}}};
  out.json_file("plan.json", plan);
  st.report["plan"] = plan;
}

void stage_fabricate(const RunConfig& c, RunState& st, OutputSet& out) {
  const auto& fc = c.fabrication;
  const double energy = c.plan.array.pulse_energy_nj;
  st.outcomes = simulate_sites(st.sites, energy, fc.material, fc.params, c.master_seed, c.parallelism);
  const auto summary = site_statistics(st.outcomes);
  const auto pf = poisson_fit(summary.counts);
  const double lambda = fc.params.calibration.mean_vacancies(energy);
  const double density = nitrogen_density(fc.material);

  json yield = to_json(summary, pf);
  yield["pulse_energy_nj"] = energy;
  yield["vacancies_per_pulse"] = lambda;
  yield["expected_occupancy"] = -std::expm1(-lambda);
  yield["nitrogen_density_um3"] = density;
  yield["mean_spacing_nm"] = mean_spacing_nm(density);
  yield["capture_radius_nm"] = 1000.0 * fc.params.capture_radius_um(fc.material);
  out.json_file("yield.json", yield);
  out.csv("outcomes.csv", [&](std::ostream& os) { write_outcomes_csv(os, st.outcomes); });
  st.report["yield"] = yield;

  const auto rw = rewrite_until_filled(st.sites, energy, fc.material, fc.params,
                                       fc.rewrite_max_rounds, c.master_seed, c.parallelism);
  std::vector<double> rounds_filled;
  for (std::size_t i = 0; i < rw.rounds_used.size(); ++i)
    if (rw.final_sites[i].multiplicity() > 0) rounds_filled.push_back(rw.rounds_used[i]);
  const auto final_summary = summarize(rw.final_counts);
  const double occupied = rw.final_counts.n_sites - rw.final_counts.by_multiplicity[0];
  json rewrite{{"max_rounds", fc.rewrite_max_rounds},
               {"filled_sites", occupied},
               {"filled_fraction", final_summary.occupied_fraction},
               {"mean_rounds_to_fill", rounds_filled.empty() ? 0.0 : stats::mean(rounds_filled)},
               {"expected_rounds", 1.0 / -std::expm1(-lambda)},
               {"single_fraction_of_filled", final_summary.fraction_of_occupied[1]},
               {"expected_single_fraction", lambda / std::expm1(lambda)}};
  out.json_file("rewrite.json", rewrite);
  out.csv("rewrite_rounds.csv", [&](std::ostream& os) {
    io::csv_row(os, "site_id", "rounds", "multiplicity");
    for (std::size_t i = 0; i < rw.rounds_used.size(); ++i)
      io::csv_row(os, i, rw.rounds_used[i], rw.final_sites[i].multiplicity());
  });
  st.report["rewrite"] = rewrite;
}

void stage_image(const RunConfig& c, RunState& st, OutputSet& out) {
  const auto& ic = c.imaging;
  PsfModel psf = ic.psf;
  if (ic.psf_from_focus) {
    FocusConfig f = c.aberration.focus;
    f.wavelength_nm = ic.excitation_wavelength_nm;
    f.depth_um = 0.0;
    const auto fw = focal_fwhm(f);
    psf.sigma_xy_nm = PsfModel::sigma_from_fwhm(fw.radial_nm);
    psf.sigma_z_nm = PsfModel::sigma_from_fwhm(fw.axial_nm);
  }
  LocalizeOptions opts;
  opts.sigma_xy_guess_nm = psf.sigma_xy_nm;
  opts.sigma_z_guess_nm = psf.sigma_z_nm;

  const auto ids = pick_sites(st.outcomes, true, ic.max_sites);
  std::vector<Localization> locs(ids.size());
  parallel_for(ids.size(), c.parallelism, [&](std::size_t k) {
    const auto& site = st.outcomes[ids[k]];
    const auto spec = VolumeSpec::centred(site.site.target_um, ic.voxel_pitch_nm, ic.dims, ic.dwell_s);
    Rng rng = make_stream(c.master_seed, Stage::Imaging, ids[k]);
    auto volume = render_scan(site.nvc_positions, psf, spec, rng);
    locs[k] = localize(volume, 1000.0 * site.site.target_um, opts);
    if (k == 0) {
      volume.seed = derive_seed(c.master_seed, Stage::Imaging, ids[k]);
      write_volume(out.dir() / "volume_example", volume);
    }
  });
  if (!ids.empty()) {
    out.record("volume_example.bin");
    out.record("volume_example.json");
  }

  std::vector<Localization> good;
  std::vector<Vec3> targets;
  std::vector<std::size_t> good_ids;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (!locs[k].converged) continue;
    good.push_back(locs[k]);
    targets.push_back(1000.0 * st.outcomes[ids[k]].site.target_um);
    good_ids.push_back(ids[k]);
  }
  out.csv("localizations.csv", [&](std::ostream& os) {
    io::csv_row(os, "site_id", "x_nm", "y_nm", "z_nm", "sx_nm", "sy_nm", "sz_nm", "converged");
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const auto& l = locs[k];
      io::csv_row(os, ids[k], l.position_nm.x(), l.position_nm.y(), l.position_nm.z(),
                  std::sqrt(l.covariance(0, 0)), std::sqrt(l.covariance(1, 1)),
                  std::sqrt(l.covariance(2, 2)), l.converged ? 1 : 0);
    }
  });

  json precision{{"localized", ids.size()}, {"converged", good.size()}, {"psf", psf}};
  if (!good.empty()) {
    const auto rep = precision_report(good, targets);
    precision.update(to_json(rep));
    out.csv("residuals.csv", [&](std::ostream& os) { write_residuals_csv(os, rep, good_ids); });
    out.csv("residual_histograms.csv", [&](std::ostream& os) { write_histograms_csv(os, rep); });
  }
  out.json_file("precision.json", precision);
  st.report["precision"] = precision;
}

void stage_hbt(const RunConfig& c, RunState& st, OutputSet& out) {
  const auto& hc = c.hbt;
  const auto ids = pick_sites(st.outcomes, false, hc.max_sites);
  std::vector<G2Estimate> estimates(ids.size());
  std::vector<MultiplicityClass> classes(ids.size());
  G2Histogram example;
  parallel_for(ids.size(), c.parallelism, [&](std::size_t k) {
    EmitterModel m = hc.emitter;
    m.k = static_cast<int>(st.outcomes[ids[k]].multiplicity());
    Rng rng = make_stream(c.master_seed, Stage::Photon, ids[k]);
    const auto stream = simulate_stream(m, hc.duration_s * 1e9, rng);
    auto hist = g2_histogram(stream, hc.bin_width_ns, hc.window_ns);
    estimates[k] = estimate_g2_zero(hist, hc.dip_fit);
    classes[k] = classify(std::max(estimates[k].g2_zero, 0.0), estimates[k].g2_zero_err);
    if (k == 0) example = std::move(hist);
  });

  // Confusion of true multiplicity (1, 2, 3, >=4) against assigned class.
  std::array<std::array<std::int64_t, 4>, 4> confusion{};
  out.csv("hbt_classes.csv", [&](std::ostream& os) {
    io::csv_row(os, "site_id", "multiplicity", "g2_zero", "g2_zero_err", "from_fit", "class");
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const auto mult = st.outcomes[ids[k]].multiplicity();
      io::csv_row(os, ids[k], mult, estimates[k].g2_zero, estimates[k].g2_zero_err,
                  estimates[k].from_fit ? 1 : 0, to_string(classes[k].kind));
      ++confusion[std::min<std::size_t>(mult, 4) - 1][static_cast<std::size_t>(classes[k].kind)];
    }
  });
  json mult{{"duration_s", hc.duration_s}, {"classified", ids.size()}};
  if (!ids.empty()) {
    mult.update(to_json(multiplicity_report(classes)));
    const auto singles = std::accumulate(confusion[0].begin(), confusion[0].end(), std::int64_t{0});
    mult["true_single_sites"] = singles;
    mult["true_single_accuracy"] = singles ? static_cast<double>(confusion[0][0]) / singles : 0.0;
    mult["confusion"] = confusion;
    out.csv("g2_example.csv", [&](std::ostream& os) { write_g2_csv(os, example); });
    if (hc.example_stream_s > 0) {
      EmitterModel m = hc.emitter;
      m.k = static_cast<int>(st.outcomes[ids[0]].multiplicity());
      Rng rng = make_stream(c.master_seed, Stage::Photon, ids[0], 1);
      const auto stream = simulate_stream(m, hc.example_stream_s * 1e9, rng);
      out.csv("stream_example.csv", [&](std::ostream& os) { write_stream_csv(os, stream); });
    }
  }
  out.json_file("multiplicity.json", mult);
  st.report["multiplicity"] = mult;
}

std::vector<double> linear_times(double lo, double hi, int n) {
  std::vector<double> t(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
  return t;
}

void stage_coherence(const RunConfig& c, RunState& st, OutputSet& out) {
  const auto& cc = c.coherence;
  const NoiseModel bath = cc.calibrate ? calibrate_bath(cc.echo_time_s, cc.stretch, cc.noise.t1_s) : cc.noise;
  const auto ids = pick_sites(st.outcomes, true, cc.max_sites);
  const auto times = linear_times(cc.t_min_s, cc.t_max_s, cc.points);
  const auto echo = PulseSequence::hahn_echo();

  std::vector<NoiseModel> site_noise(ids.size(), bath);
  std::vector<DecayCurve> curves(ids.size());
  std::vector<StretchedExpFit> fits(ids.size());
  parallel_for(ids.size(), c.parallelism, [&](std::size_t k) {
    Rng bath_rng = make_stream(c.master_seed, Stage::Coherence, ids[k], 0);
    site_noise[k].b_rad_s = bath.b_rad_s * std::exp(cc.bath_spread * std::normal_distribution<double>()(bath_rng));
    Rng rng = make_stream(c.master_seed, Stage::Coherence, ids[k], 1);
    curves[k] = synth_decay(echo, site_noise[k], times, cc.shots, rng);
    fits[k] = fit_stretched_exp(curves[k]);
  });
  std::vector<double> depths;
  for (auto id : ids) depths.push_back(st.outcomes[id].site.target_um.z());
  const auto sv = survey(fits, depths, cc.threshold_s);

  // Decoupled and T1 example curves on the nominal bath.
  constexpr auto kExample = std::numeric_limits<std::uint64_t>::max();
  const auto xy8 = PulseSequence::xy8(cc.xy8_blocks);
  const auto xy8_times = linear_times(cc.t_min_s, cc.xy8_t_max_s, cc.points);
  std::vector<double> xy8_signal(xy8_times.size());
  parallel_for(xy8_times.size(), c.parallelism,
               [&](std::size_t i) { xy8_signal[i] = coherence_signal(xy8, xy8_times[i], bath); });
  auto xy8_envelope = [&](double t) {
    const auto at = std::lower_bound(xy8_times.begin(), xy8_times.end(), t) - xy8_times.begin();
    return xy8_signal[static_cast<std::size_t>(at)];
  };
  Rng xy8_rng = make_stream(c.master_seed, Stage::Coherence, kExample, 0);
  const auto xy8_curve = synth_curve(xy8_envelope, xy8_times, cc.shots, xy8_rng);
  const auto xy8_fit = fit_stretched_exp(xy8_curve);
  Rng t1_rng = make_stream(c.master_seed, Stage::Coherence, kExample, 1);
  const auto t1_curve = synth_curve([&](double t) { return std::exp(-t / bath.t1_s); },
                                    linear_times(cc.t_min_s, cc.t1_t_max_s, cc.points), cc.shots, t1_rng);
  const auto t1_fit = fit_t1(t1_curve);

  out.csv("decays.csv", [&](std::ostream& os) {
    io::csv_row(os, "site_id", "t_s", "signal", "sigma");
    for (std::size_t k = 0; k < ids.size(); ++k)
      for (std::size_t i = 0; i < curves[k].times_s.size(); ++i)
        io::csv_row(os, ids[k], curves[k].times_s[i], curves[k].signal[i], curves[k].sigma[i]);
  });
  out.csv("decay_xy8.csv", [&](std::ostream& os) { write_curve_csv(os, xy8_curve); });
  out.csv("decay_t1.csv", [&](std::ostream& os) { write_curve_csv(os, t1_curve); });
  out.csv("survey.csv", [&](std::ostream& os) { write_survey_csv(os, sv); });

  json site_fits = json::array();
  std::vector<double> t2s;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    site_fits.push_back({{"site_id", ids[k]},
                         {"depth_um", depths[k]},
                         {"b_rad_s", site_noise[k].b_rad_s},
                         {"fit", to_json(fits[k])}});
    if (fits[k].converged) t2s.push_back(fits[k].T2_s);
  }
  out.json_file("fits.json", {{"bath", bath},
                              {"sequence", echo.name()},
                              {"sites", site_fits},
                              {"xy8", {{"sequence", xy8.name()}, {"fit", to_json(xy8_fit)}}},
                              {"t1", to_json(t1_fit)}});
  json coh{{"bath", bath},
           {"echo_decay_time_s", decay_time(echo, bath)},
           {"survey", to_json(sv)},
           {"median_echo_T2_s", t2s.empty() ? json(nullptr) : json(median(t2s))},
           {"xy8",
            {{"sequence", xy8.name()},
             {"T2_s", xy8_fit.T2_s},
             {"T2_err_s", xy8_fit.T2_err_s},
             {"n", xy8_fit.n},
             {"n_err", xy8_fit.n_err},
             {"converged", xy8_fit.converged}}},
           {"t1",
            {{"T1_s", t1_fit.T1_s},
             {"T1_err_s", t1_fit.T1_err_s},
             {"converged", t1_fit.converged},
             {"unbounded", t1_fit.unbounded}}}};
  out.json_file("coherence.json", coh);
  st.report["coherence"] = coh;
}

void stage_aberration(const RunConfig& c, RunState& st, OutputSet& out) {
  const auto& ac = c.aberration;
  std::vector<json> rows(ac.depths_um.size());
  std::vector<AxialProfile> uncorrected(rows.size()), corrected(rows.size());
  parallel_for(rows.size(), c.parallelism, [&](std::size_t i) {
    FocusConfig f = ac.focus;
    f.depth_um = ac.depths_um[i];
    const auto plain = focus_peak(f, zero_phase());
    const auto fixed_peak = focus_peak(f, correction_pupil(f));
    const double lo = -5.0, hi = 1.2 * f.depth_um + 5.0;
    uncorrected[i] = axial_intensity(f, zero_phase(), lo, hi, ac.profile_points);
    corrected[i] = axial_intensity(f, correction_pupil(f), lo, hi, ac.profile_points);
    rows[i] = {{"depth_um", f.depth_um},
               {"strehl_uncorrected", plain.strehl},
               {"strehl_corrected", fixed_peak.strehl},
               {"focal_shift_um", plain.z_um},
               {"peak_to_valley_rad", peak_to_valley(f)}};
  });
  for (std::size_t i = 0; i < rows.size(); ++i) {
    FocusConfig f = ac.focus;
    f.depth_um = ac.depths_um[i];
    const auto tag = depth_tag(f.depth_um);
    out.csv("pupil_" + tag + ".csv", [&](std::ostream& os) { write_pupil_csv(os, aberration_pupil(f, true)); });
    out.csv("axial_uncorrected_" + tag + ".csv", [&](std::ostream& os) { write_profile_csv(os, uncorrected[i]); });
    out.csv("axial_corrected_" + tag + ".csv", [&](std::ostream& os) { write_profile_csv(os, corrected[i]); });
  }
  FocusConfig surface = ac.focus;
  surface.depth_um = 0.0;
  const auto fw = focal_fwhm(surface);
  json ab{{"focus", surface},
          {"fwhm_radial_nm", fw.radial_nm},
          {"fwhm_axial_nm", fw.axial_nm},
          {"depths", rows}};
  out.json_file("strehl.json", ab);
  st.report["aberration"] = ab;
}

bool runs(const std::string& experiment, const std::string& stage) {
  static const std::map<std::string, std::set<std::string>> stages = {
      {"plan", {"plan"}},
      {"fabricate", {"plan", "fabricate"}},
      {"image", {"plan", "fabricate", "image"}},
      {"hbt", {"plan", "fabricate", "hbt"}},
      {"coherence", {"plan", "fabricate", "coherence"}},
      {"aberration", {"aberration"}},
      {"full-pipeline", {"plan", "fabricate", "image", "hbt", "coherence", "aberration"}},
  };
  return stages.at(experiment).count(stage) > 0;
}

// File that holds each report section.
const std::map<std::string, std::string>& report_files() {
  static const std::map<std::string, std::string> files = {
      {"run", "run.json"},           {"plan", "plan.json"},
      {"yield", "yield.json"},       {"rewrite", "rewrite.json"},
      {"precision", "precision.json"}, {"multiplicity", "multiplicity.json"},
      {"coherence", "coherence.json"}, {"aberration", "strehl.json"},
  };
  return files;
}

}  // namespace

RunManifest run(const RunConfig& c, std::ostream* log) {
  validate(c);
  fs::create_directories(c.output_dir);
  OutputSet out(c.output_dir);
  RunState st;
  RunManifest manifest;
  json snapshot = config_to_json(c);
  manifest.config = snapshot;

  json run_info{{"toolkit", kToolkitName},
                {"version", kToolkitVersion},
                {"experiment", c.experiment},
                {"master_seed", c.master_seed}};
  out.json_file("run.json", run_info);
  st.report["run"] = run_info;

  using Stage = void (*)(const RunConfig&, RunState&, OutputSet&);
  const std::vector<std::pair<std::string, Stage>> order = {
      {"plan", stage_plan},         {"fabricate", stage_fabricate}, {"image", stage_image},
      {"hbt", stage_hbt},           {"coherence", stage_coherence}, {"aberration", stage_aberration},
  };
  for (const auto& [name, fn] : order) {
    if (!runs(c.experiment, name)) continue;
    if (log) *log << "[" << name << "] running\n" << std::flush;
    const auto start = std::chrono::steady_clock::now();
    try {
      fn(c, st, out);
    } catch (const std::exception& e) {
      throw std::runtime_error("stage " + name + ": " + e.what());
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    manifest.stages.push_back({name, wall});
    if (log) *log << "[" << name << "] done in " << fixed(wall, 2) << " s\n" << std::flush;
  }

  out.text("report.txt", render_report(st.report));
  manifest.outputs = out.digests();
  io::write_json(c.output_dir / "manifest.json", to_json(manifest));
  return manifest;
}

ReportInputs load_report_inputs(const fs::path& dir) {
  ReportInputs inputs;
  for (const auto& [key, file] : report_files()) {
    const fs::path p = dir / file;
    if (!fs::exists(p)) continue;
    try {
      inputs[key] = json::parse(io::read_text(p));
    } catch (const json::exception& e) {
      throw std::runtime_error("cannot parse " + p.string() + ": " + e.what());
    }
  }
  return inputs;
}

std::string render_report(const ReportInputs& in) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  auto has = [&](const char* key) { return in.count(key) > 0; };
  auto num = [](const json& j, const char* key) { return j.at(key).get<double>(); };
  auto count = [](const json& j, const char* key) { return j.at(key).get<std::int64_t>(); };

  os << kToolkitName << " run report\n";
  if (has("run")) {
    const auto& r = in.at("run");
    os << "experiment " << r.at("experiment").get<std::string>() << ", master seed "
       << r.at("master_seed").get<std::uint64_t>() << ", version " << r.at("version").get<std::string>()
       << "\n";
  }

  os << "\nArray occupancy\n";
  if (has("plan")) {
    const auto& p = in.at("plan");
    const auto& cap = p.at("capacity");
    os << "  array " << p.at("array").at("label").get<std::string>() << ": " << count(p, "site_count")
       << " sites at " << io::format_number(p.at("array").at("pulse_energy_nj").get<double>()) << " nJ\n";
    os << "  capacity at " << io::format_number(num(cap, "pitch_um")) << " um pitch: "
       << count(cap, "nvc_sites") << " NVC sites, " << count(cap, "total_qubits") << " qubits\n";
  }
  if (has("yield")) {
    const auto& y = in.at("yield");
    const auto& by = y.at("by_multiplicity");
    const auto n = count(y, "n_sites");
    os << "  occupied sites: " << percent(num(y, "occupied_fraction")) << " ("
       << n - by.at("0").get<std::int64_t>() << "/" << n << ")\n";
    os << "  single-NVC sites: " << percent(num(y, "single_fraction_of_sites")) << " of sites, "
       << percent(y.at("fraction_of_occupied").at("1").get<double>()) << " of occupied\n";
    os << "  sites with 0/1/2/3/>=4 NVCs: " << by.at("0").get<std::int64_t>() << "/"
       << by.at("1").get<std::int64_t>() << "/" << by.at("2").get<std::int64_t>() << "/"
       << by.at("3").get<std::int64_t>() << "/" << by.at(">=4").get<std::int64_t>() << "\n";
    const auto& pf = y.at("poisson");
    os << "  Poisson fit: lambda = " << fixed(num(pf, "lambda_hat"), 4) << " +/- "
       << fixed(num(pf, "lambda_std_error"), 4) << " (pulse model " << fixed(num(y, "vacancies_per_pulse"), 4)
       << "), goodness-of-fit p = " << fixed(num(pf, "gof_p"), 3) << "\n";
  }
  if (has("rewrite")) {
    const auto& r = in.at("rewrite");
    os << "  rewriting: " << fixed(num(r, "mean_rounds_to_fill"), 2) << " pulses per filled site (geometric "
       << fixed(num(r, "expected_rounds"), 2) << "), single fraction after filling "
       << percent(num(r, "single_fraction_of_filled")) << "\n";
  }
  if (!has("plan") && !has("yield")) os << "  not run\n";

  os << "\nPlacement residuals\n";
  if (has("precision")) {
    const auto& p = in.at("precision");
    os << "  localized single-NVC sites: " << count(p, "localized") << " (" << count(p, "converged")
       << " converged)\n";
    if (p.contains("std_nm")) {
      const auto& s = p.at("std_nm");
      const auto& g = p.at("registered_std_nm");
      os << "  residual std x/y/z: " << fixed(s[0].get<double>(), 0) << " / " << fixed(s[1].get<double>(), 0)
         << " / " << fixed(s[2].get<double>(), 0) << " nm\n";
      os << "  after affine grid registration: " << fixed(g[0].get<double>(), 0) << " / "
         << fixed(g[1].get<double>(), 0) << " / " << fixed(g[2].get<double>(), 0) << " nm\n";
    }
  } else {
    os << "  not run\n";
  }

  os << "\nHBT multiplicity\n";
  if (has("multiplicity")) {
    const auto& m = in.at("multiplicity");
    os << "  classified sites: " << count(m, "classified") << " (" << io::format_number(num(m, "duration_s"))
       << " s per site)\n";
    if (m.contains("counts")) {
      for (const char* k : {"single", "double", "triple", "unresolved"})
        os << "  " << k << ": " << m.at("counts").at(k).get<std::int64_t>() << " ("
           << percent(m.at("fractions").at(k).get<double>()) << ")\n";
      os << "  true single NVCs classified single: " << percent(num(m, "true_single_accuracy")) << "\n";
    }
  } else {
    os << "  not run\n";
  }

  os << "\nSpin coherence\n";
  if (has("coherence")) {
    const auto& c = in.at("coherence");
    const auto& b = c.at("bath");
    os << "  bath: b = " << fixed(num(b, "b_rad_s"), 1) << " rad/s, tau_c = " << fixed(1e6 * num(b, "tau_c_s"), 1)
       << " us, T1 = " << fixed(1e3 * num(b, "t1_s"), 2) << " ms; echo 1/e time "
       << fixed(1e6 * num(c, "echo_decay_time_s"), 0) << " us\n";
    os << "  echo T2 survey: " << c.at("survey").at("tally").get<std::string>() << "\n";
    if (!c.at("median_echo_T2_s").is_null())
      os << "  median echo T2: " << fixed(1e6 * num(c, "median_echo_T2_s"), 0) << " us\n";
    const auto& x = c.at("xy8");
    os << "  " << x.at("sequence").get<std::string>() << ": T2 = " << fixed(1e3 * num(x, "T2_s"), 2) << " +/- "
       << fixed(1e3 * num(x, "T2_err_s"), 2) << " ms, n = " << fixed(num(x, "n"), 2) << " +/- "
       << fixed(num(x, "n_err"), 2) << "\n";
    const auto& t = c.at("t1");
    os << "  T1 = " << fixed(1e3 * num(t, "T1_s"), 2) << " +/- " << fixed(1e3 * num(t, "T1_err_s"), 2) << " ms"
       << (t.at("unbounded").get<bool>() ? " (unbounded)" : "") << "\n";
  } else {
    os << "  not run\n";
  }

  os << "\nWrite-laser aberration\n";
  if (has("aberration")) {
    const auto& a = in.at("aberration");
    os << "  focal FWHM: " << fixed(num(a, "fwhm_radial_nm"), 0) << " nm radial, "
       << fixed(num(a, "fwhm_axial_nm"), 0) << " nm axial\n";
    os << "  depth_um  strehl_uncorrected  strehl_corrected  focal_shift_um\n";
    for (const auto& r : a.at("depths")) {
      os << "  " << fixed(num(r, "depth_um"), 1) << "  " << fixed(num(r, "strehl_uncorrected"), 4) << "  "
         << fixed(num(r, "strehl_corrected"), 6) << "  " << fixed(num(r, "focal_shift_um"), 2) << "\n";
    }
  } else {
    os << "  not run\n";
  }
  return os.str();
}

}  // namespace nvarray
