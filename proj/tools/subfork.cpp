// subfork: phantom generation, per-axis training, fused segmentation, head
// model assembly, tDCS field solving and evaluation.
//
// Exit codes: 0 success, 2 input/validation error, 3 numerical failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "subfork/conductor.hpp"
#include "subfork/dataset.hpp"
#include "subfork/fusion.hpp"
#include "subfork/metrics.hpp"
#include "subfork/phantom.hpp"
#include "subfork/spfd.hpp"

namespace fs = std::filesystem;
using namespace subfork;

namespace {

constexpr const char* kVersion = "0.1.0";

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw ValidationError("write failed for '" + path.string() + "'");
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ValidationError("cannot create directory '" + dir.string() + "'");
}

Json read_json(const std::string& path) {
  const auto text = subfork::detail::read_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw ValidationError("'" + path + "' is not valid JSON: " + e.what());
  }
}

/// Records inputs, config and outputs of one run; the config hash covers the
/// config and the content hash of every input.
class Manifest {
public:
  Manifest(std::string subcommand, std::uint64_t seed)
      : subcommand_(std::move(subcommand)), seed_(seed), start_(std::chrono::steady_clock::now()) {}

  void input(const std::string& path) {
    std::string bytes;
    if (fs::is_regular_file(path)) bytes = subfork::detail::read_file(path);
    inputs_.push_back({{"path", path}, {"fnv1a", hex(fnv1a(bytes))}});
  }
  void output(const fs::path& path) { outputs_.push_back(path.string()); }
  Json& config() { return config_; }
  Json& results() { return results_; }

  void write(const fs::path& path) const {
    Json hashed{{"subcommand", subcommand_}, {"seed", seed_}, {"config", config_}, {"inputs", inputs_}};
    Json j{{"subcommand", subcommand_},
           {"version", kVersion},
           {"seed", seed_},
           {"config", config_},
           {"config_hash", hex(fnv1a(hashed.dump()))},
           {"inputs", inputs_},
           {"outputs", outputs_},
           {"results", results_},
           {"wall_time_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()}};
    write_text(path, j.dump(2) + "\n");
  }

private:
  std::string subcommand_;
  std::uint64_t seed_;
  std::chrono::steady_clock::time_point start_;
  Json config_ = Json::object();
  Json results_ = Json::object();
  Json inputs_ = Json::array();
  Json outputs_ = Json::array();
};

fs::path sidecar(const std::string& out, const std::string& suffix) { return fs::path(out + suffix); }

// --- phantom ---------------------------------------------------------------------

struct PhantomArgs {
  std::string spec, out_dir;
  std::uint64_t seed = 1;
};

void cmd_phantom(const PhantomArgs& a) {
  Manifest m("phantom", a.seed);
  m.input(a.spec);
  const auto spec = parse_phantom_spec(read_json(a.spec));
  const auto [mri, labels] = make_phantom(spec, a.seed);
  make_dir(a.out_dir);
  const fs::path dir(a.out_dir);
  save_volume((dir / "mri.vvol").string(), mri);
  save_volume((dir / "labels.vvol").string(), labels);
  m.output(dir / "mri.vvol");
  m.output(dir / "labels.vvol");
  m.results()["n_labels"] = labels.n_labels();
  m.write(dir / "manifest.json");
  std::cout << "wrote " << (dir / "mri.vvol").string() << " and labels.vvol (" << labels.n_labels() << " labels)\n";
}

// --- train -----------------------------------------------------------------------

struct TrainArgs {
  std::string dataset, out;
  std::string axis = "axial";
  int degree = 7, depth = 2, kernel = 3, input_size = 256, epochs = 100, batch = 4, label_offset = 0;
  std::vector<int> kernels;
  double learning_rate = 1e-3, val_fraction = 0.1, empty_keep = 0.25;
  std::uint64_t seed = 1;
  bool quiet = false;
};

void cmd_train(const TrainArgs& a) {
  NetworkSpec spec;
  spec.degree = a.degree;
  spec.depth = a.depth;
  spec.encoder_kernel = a.kernel;
  spec.decoder_kernels = a.kernels;
  spec.input_size = a.input_size;
  try {
    spec.validate();
  } catch (const SpecError& e) {
    throw ValidationError(e.what());
  }
  const Axis axis = parse_axis(a.axis);
  const auto cases = load_dataset(a.dataset);

  Manifest m("train", a.seed);
  for (const auto& c : cases) {
    m.input((fs::path(a.dataset) / c.name / "mri.vvol").string());
    m.input((fs::path(a.dataset) / c.name / "labels.vvol").string());
  }
  m.config() = {{"axis", to_string(axis)},        {"network", spec.to_json()},       {"epochs", a.epochs},
                {"batch", a.batch},               {"learning_rate", a.learning_rate}, {"val_fraction", a.val_fraction},
                {"empty_keep", a.empty_keep},     {"label_offset", a.label_offset}};

  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.adam.learning_rate = a.learning_rate;
  cfg.rng_seed = a.seed;
  const auto t0 = std::chrono::steady_clock::now();
  if (!a.quiet)
    cfg.on_epoch = [&](int e, double loss) {
      std::cerr << "epoch " << e << "/" << a.epochs << " loss " << loss << " ("
                << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s)\n";
    };
  const auto run = train_axis(cases, axis, spec, cfg, a.val_fraction, a.empty_keep, a.label_offset);

  save_checkpoint(a.out, run.result.params);
  std::ostringstream log;
  log << "epoch,mean_loss\n";
  log.precision(17);
  for (const auto& e : run.result.log) log << e.epoch << "," << e.mean_loss << "\n";
  write_text(sidecar(a.out, ".loss.csv"), log.str());
  m.output(a.out);
  m.output(sidecar(a.out, ".loss.csv"));
  m.results() = {{"train_slices", run.train_slices},
                 {"validation_slices", run.validation_slices},
                 {"final_train_loss", run.result.log.back().mean_loss},
                 {"validation_loss", run.validation_loss}};
  m.write(sidecar(a.out, ".manifest.json"));
  std::cout << "trained " << to_string(axis) << " network on " << run.train_slices << " slices, validation loss "
            << run.validation_loss << "\n";
}

// --- segment ---------------------------------------------------------------------

struct SegmentArgs {
  std::string mri, axial, sagittal, coronal, out, gm_mask;
  double epsilon = 0.3;
  int neighborhood = 3;
  std::vector<int> gm_labels{tissue::kGreyMatter};
};

void cmd_segment(const SegmentArgs& a) {
  Manifest m("segment", 0);
  for (const auto* p : {&a.mri, &a.axial, &a.sagittal, &a.coronal}) m.input(*p);
  const auto mri = load_scalar(a.mri);
  const std::array<NetworkParams, 3> nets{load_checkpoint(a.axial), load_checkpoint(a.sagittal),
                                          load_checkpoint(a.coronal)};
  for (const auto& n : nets)
    if (n.spec.degree != nets[0].spec.degree)
      throw ValidationError("checkpoints disagree on degree N: " + std::to_string(nets[0].spec.degree) + ", " +
                            std::to_string(nets[1].spec.degree) + ", " + std::to_string(nets[2].spec.degree));
  FusionConfig fc;
  fc.epsilon = a.epsilon;
  fc.neighborhood = a.neighborhood;
  if (!a.gm_mask.empty()) {
    m.input(a.gm_mask);
    fc.gm_mask = load_labels(a.gm_mask);
    fc.gm_allowed = LabelSet(a.gm_labels.begin(), a.gm_labels.end());
  }
  fc.validate();
  m.config() = {{"epsilon", a.epsilon}, {"neighborhood", a.neighborhood}, {"gm_mask", !a.gm_mask.empty()},
                {"gm_labels", a.gm_labels}};

  const auto probs = infer_volume({&nets[0], &nets[1], &nets[2]}, mri);
  const auto fused = probability_fuse_infer(probs, fc);
  save_volume(a.out, fused);
  m.output(a.out);
  Json counts = Json::object();
  for (int l = 1; l <= fused.n_labels(); ++l)
    counts[std::to_string(l)] = std::count(fused.values().begin(), fused.values().end(), l);
  m.results()["voxels_per_label"] = counts;
  m.write(sidecar(a.out, ".manifest.json"));
  std::cout << "wrote " << a.out << "\n";
}

// --- assemble --------------------------------------------------------------------

struct AssembleArgs {
  std::string head, deep, out;
  int offset = tissue::kDeepOffset;
  std::vector<int> within;
};

void cmd_assemble(const AssembleArgs& a) {
  Manifest m("assemble", 0);
  m.input(a.head);
  m.input(a.deep);
  m.config() = {{"offset", a.offset}, {"within", a.within}};
  const auto head = load_labels(a.head);
  auto deep = load_labels(a.deep);
  if (!a.within.empty()) {
    if (!head.header().same_grid(deep.header())) throw ShapeError("head and deep volumes differ in dims");
    const LabelSet keep(a.within.begin(), a.within.end());
    for (std::size_t i = 0; i < deep.size(); ++i)
      if (!keep.contains(head[i])) deep[i] = 0;
  }
  const auto merged = embed_labels(head, deep, a.offset);
  save_volume(a.out, merged);
  m.output(a.out);
  m.write(sidecar(a.out, ".manifest.json"));
  std::cout << "wrote " << a.out << " (" << merged.n_labels() << " labels)\n";
}

// --- solve -----------------------------------------------------------------------

struct SolveArgs {
  std::string model, table, montage, out_dir;
  std::string method = "sor";
  double tol = 1e-6, omega = 1.9;
  long max_iters = 200000;
  int mg_levels = 3;
  bool harmonic = false;
};

/// Axis along which the injection nodes are furthest apart, and the node
/// plane halfway between them.
std::pair<int, int> audit_plane(const Montage& mt) {
  const auto& s = mt.source_node();
  const auto& t = mt.sink_node();
  int axis = 0;
  for (int d = 1; d < 3; ++d)
    if (std::abs(s[d] - t[d]) > std::abs(s[axis] - t[axis])) axis = d;
  return {axis, (s[axis] + t[axis]) / 2};
}

void cmd_solve(const SolveArgs& a) {
  Manifest m("solve", 0);
  for (const auto* p : {&a.model, &a.table, &a.montage}) m.input(*p);
  SolverConfig cfg;
  cfg.method = SolverConfig::parse_method(a.method);
  cfg.tol = a.tol;
  cfg.omega = a.omega;
  cfg.max_iters = a.max_iters;
  cfg.mg_levels = a.mg_levels;
  cfg.mg_harmonic = a.harmonic;
  try {
    cfg.validate();
  } catch (const SpecError& e) {
    throw ValidationError(e.what());
  }
  m.config() = {{"method", a.method}, {"tol", a.tol},           {"omega", a.omega},
                {"max_iters", a.max_iters}, {"mg_levels", a.mg_levels}, {"mg_harmonic", a.harmonic}};

  const auto model = load_labels(a.model);
  const auto table = ConductivityTable::from_json(read_json(a.table));
  const auto desc = MontageDescriptor::from_json(read_json(a.montage));
  const auto sigma = assign_conductivity(model, table);
  const auto built = desc.build(sigma, model);
  if (cfg.method == SolverConfig::Method::multigrid) {
    try {
      check_mg_levels(sigma.dims(), cfg.mg_levels);
    } catch (const SpecError& e) {
      throw ValidationError(e.what());
    }
  }

  const auto t0 = std::chrono::steady_clock::now();
  const auto sys = assemble(built.montage.sigma, built.montage);
  const auto f = solve(sys, built.montage.sigma, cfg);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto e = compute_efield(f, sys.grid, built.montage.sigma);
  const auto [axis, plane] = audit_plane(built.montage);
  const double audit = current_audit(f, sys.grid, axis, plane);

  make_dir(a.out_dir);
  const fs::path dir(a.out_dir);
  save_volume((dir / "phi.vvol").string(), potential_volume(f, model.spacing()));
  save_volume((dir / "efield.vvol").string(), e.magnitude);
  save_volume((dir / "sigma.vvol").string(), built.montage.sigma);

  Json per_label = Json::object();
  for (int l = 1; l <= model.n_labels(); ++l) {
    double sum = 0, peak = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < model.size(); ++i)
      if (model[i] == l) {
        sum += e.magnitude[i];
        peak = std::max(peak, e.magnitude[i]);
        ++n;
      }
    if (n > 0) per_label[std::to_string(l)] = {{"voxels", n}, {"mean_E", sum / n}, {"max_E", peak}};
  }
  auto electrode = [](const ElectrodeReport& r) {
    return Json{{"columns", r.columns},
                {"saline_voxels", r.saline_voxels},
                {"rubber_voxels", r.rubber_voxels},
                {"outer_node", r.outer_node}};
  };
  Json report{{"method", a.method},
              {"iterations", f.iterations},
              {"fine_sweeps", f.fine_sweeps},
              {"residual", f.residual_norm},
              {"residual_history", f.residual_history},
              {"wall_time_s", wall},
              {"injected_current_A", built.montage.injected_current},
              {"audit", {{"axis", axis}, {"node_plane", plane}, {"current_A", audit}}},
              {"source_node", built.montage.source_node()},
              {"sink_node", built.montage.sink_node()},
              {"per_label", per_label}};
  if (!desc.plates) report["electrodes"] = {{"anode", electrode(built.anode)}, {"cathode", electrode(built.cathode)}};
  write_text(dir / "report.json", report.dump(2) + "\n");
  for (const char* name : {"phi.vvol", "efield.vvol", "sigma.vvol", "report.json"}) m.output(dir / name);
  m.results() = {{"iterations", f.iterations}, {"audit_current_A", audit}};
  m.write(dir / "manifest.json");
  std::cout << "solved in " << f.iterations << " iterations (" << wall << " s), audit current " << audit * 1e3
            << " mA\n";
}

// --- evaluate --------------------------------------------------------------------

struct EvaluateArgs {
  std::string seg, truth, out, efield, efield_ref, json;
  std::vector<int> labels;
  std::string hd = "symmetric";
  double percentile = 99.9;
};

std::string cell(const std::optional<double>& v) {
  if (!v) return "undefined";
  std::ostringstream s;
  s.precision(10);
  s << *v;
  return s.str();
}

Json jcell(const std::optional<double>& v) { return v ? Json(*v) : Json("undefined"); }

void cmd_evaluate(const EvaluateArgs& a) {
  Manifest m("evaluate", 0);
  m.input(a.seg);
  m.input(a.truth);
  const auto seg = load_labels(a.seg), truth = load_labels(a.truth);
  if (seg.dims() != truth.dims()) throw ValidationError("segmentation and reference differ in dims");
  const bool fields = !a.efield.empty() || !a.efield_ref.empty();
  if (fields && (a.efield.empty() || a.efield_ref.empty()))
    throw ValidationError("--efield and --efield-ref must be given together");
  std::optional<ScalarVolume> e, e0;
  if (fields) {
    m.input(a.efield);
    m.input(a.efield_ref);
    e = load_scalar(a.efield);
    e0 = load_scalar(a.efield_ref);
    if (e->dims() != seg.dims() || e0->dims() != seg.dims())
      throw ValidationError("field volumes differ in dims from the segmentations");
  }
  if (a.hd != "symmetric" && a.hd != "directed") throw ValidationError("--hd must be symmetric or directed");
  const auto mode = a.hd == "directed" ? HausdorffMode::directed : HausdorffMode::symmetric;
  std::vector<int> labels = a.labels;
  if (labels.empty())
    for (int l = 1; l <= std::max(seg.n_labels(), truth.n_labels()); ++l) labels.push_back(l);
  m.config() = {{"labels", labels}, {"hd", a.hd}, {"percentile", a.percentile}, {"fields", fields}};

  std::ostringstream csv;
  csv << "label,dice,hd_mm" << (fields ? ",global_error,local_error" : "") << "\n";
  Json rows = Json::array();
  std::array<std::vector<double>, 4> defined;
  for (int l : labels) {
    if (l < 1 || l > 255) throw ValidationError("label " + std::to_string(l) + " outside 1..255");
    std::array<std::optional<double>, 4> v;
    const bool present = std::find(seg.values().begin(), seg.values().end(), l) != seg.values().end() ||
                         std::find(truth.values().begin(), truth.values().end(), l) != truth.values().end();
    if (present) v[0] = dice(seg, truth, l);
    try {
      v[1] = hausdorff(seg, truth, l, mode);
    } catch (const UndefinedMetricError&) {
    }
    if (fields) {
      // Region is the reference segmentation's structure.
      auto region = make_label_volume(truth.dims(), 1, truth.spacing());
      for (std::size_t i = 0; i < truth.size(); ++i) region[i] = truth[i] == l;
      try {
        const auto ce = percentile_cap(*e, region, a.percentile).capped;
        const auto ce0 = percentile_cap(*e0, region, a.percentile).capped;
        v[2] = global_error(ce, ce0, region);
        v[3] = local_error(ce, ce0, region);
      } catch (const UndefinedMetricError&) {
      }
    }
    csv << l << "," << cell(v[0]) << "," << cell(v[1]);
    if (fields) csv << "," << cell(v[2]) << "," << cell(v[3]);
    csv << "\n";
    Json row{{"label", l}, {"dice", jcell(v[0])}, {"hd_mm", jcell(v[1])}};
    if (fields) {
      row["global_error"] = jcell(v[2]);
      row["local_error"] = jcell(v[3]);
    }
    rows.push_back(row);
    for (int k = 0; k < 4; ++k)
      if (v[k]) defined[k].push_back(*v[k]);
  }
  auto summary = [&](int k) -> std::pair<std::optional<double>, std::optional<double>> {
    if (defined[k].empty()) return {};
    const auto s = summarize(defined[k]);
    return {s.mean, s.sd};
  };
  Json js{{"rows", rows}};
  for (const auto* stat : {"mean", "sd"}) {
    const bool mean = std::string(stat) == "mean";
    csv << stat;
    Json row{{"label", stat}};
    const char* names[4] = {"dice", "hd_mm", "global_error", "local_error"};
    for (int k = 0; k < (fields ? 4 : 2); ++k) {
      const auto [mu, sd] = summary(k);
      const auto& x = mean ? mu : sd;
      csv << "," << cell(x);
      row[names[k]] = jcell(x);
    }
    csv << "\n";
    js[stat] = row;
  }
  write_text(a.out, csv.str());
  m.output(a.out);
  if (!a.json.empty()) {
    write_text(a.json, js.dump(2) + "\n");
    m.output(a.json);
  }
  m.write(sidecar(a.out, ".manifest.json"));
  std::cout << csv.str();
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const PlacementError*>(&e) || dynamic_cast<const ConvergenceError*>(&e) ||
      dynamic_cast<const SingularSystemError*>(&e))
    return 3;
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep-structure segmentation and tDCS field modelling on voxel head models"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic MRI + label volume pair");
  phantom->add_option("spec", pa.spec, "Phantom descriptor JSON")->required();
  phantom->add_option("out_dir", pa.out_dir, "Output directory")->required();
  phantom->add_option("--seed", pa.seed, "Noise and jitter seed");

  TrainArgs ta;
  auto* trainc = app.add_subcommand("train", "Train one per-axis network on a dataset directory");
  trainc->add_option("dataset", ta.dataset, "Directory of {case}/mri.vvol + {case}/labels.vvol")->required();
  trainc->add_option("out", ta.out, "Output checkpoint path")->required();
  trainc->add_option("--axis", ta.axis, "axial, sagittal or coronal");
  trainc->add_option("--degree", ta.degree, "Number of output tracks N");
  trainc->add_option("--depth", ta.depth, "Encoder depth D");
  trainc->add_option("--kernel", ta.kernel, "Encoder kernel size r");
  trainc->add_option("--kernels", ta.kernels, "Per-track decoder kernel sizes, comma separated")->delimiter(',');
  trainc->add_option("--input-size", ta.input_size, "Network input edge S");
  trainc->add_option("--epochs", ta.epochs);
  trainc->add_option("--batch", ta.batch);
  trainc->add_option("--learning-rate", ta.learning_rate);
  trainc->add_option("--val-fraction", ta.val_fraction, "Held-out slice fraction");
  trainc->add_option("--empty-keep", ta.empty_keep, "Fraction of structure-free slices kept");
  trainc->add_option("--label-offset", ta.label_offset, "Track n learns label offset+n+1");
  trainc->add_option("--seed", ta.seed);
  trainc->add_flag("--quiet", ta.quiet, "No per-epoch progress");

  SegmentArgs sa;
  auto* segment = app.add_subcommand("segment", "Per-axis inference and fusion into one label volume");
  segment->add_option("mri", sa.mri)->required();
  segment->add_option("axial", sa.axial, "Axial checkpoint")->required();
  segment->add_option("sagittal", sa.sagittal, "Sagittal checkpoint")->required();
  segment->add_option("coronal", sa.coronal, "Coronal checkpoint")->required();
  segment->add_option("out", sa.out, "Output label volume")->required();
  segment->add_option("--epsilon", sa.epsilon, "Background threshold");
  segment->add_option("--neighborhood", sa.neighborhood, "Fusion window edge");
  segment->add_option("--gm-mask", sa.gm_mask, "Head model whose grey matter labels are cleared");
  segment->add_option("--gm-labels", sa.gm_labels, "Labels of --gm-mask treated as grey matter")->delimiter(',');

  AssembleArgs aa;
  auto* assemblec = app.add_subcommand("assemble", "Embed a deep segmentation into a head model");
  assemblec->add_option("head", aa.head)->required();
  assemblec->add_option("deep", aa.deep)->required();
  assemblec->add_option("out", aa.out)->required();
  assemblec->add_option("--offset", aa.offset, "Added to every deep label");
  assemblec->add_option("--within", aa.within, "Keep deep labels only where the head model has these labels")
      ->delimiter(',');

  SolveArgs va;
  auto* solvec = app.add_subcommand("solve", "Place electrodes and solve for the potential and |E|");
  solvec->add_option("model", va.model, "Label volume")->required();
  solvec->add_option("table", va.table, "Conductivity table JSON")->required();
  solvec->add_option("montage", va.montage, "Montage descriptor JSON")->required();
  solvec->add_option("out_dir", va.out_dir)->required();
  solvec->add_option("--method", va.method, "sor or multigrid");
  solvec->add_option("--tol", va.tol, "Relative residual target");
  solvec->add_option("--omega", va.omega, "SOR relaxation factor");
  solvec->add_option("--max-iters", va.max_iters);
  solvec->add_option("--mg-levels", va.mg_levels);
  solvec->add_flag("--harmonic", va.harmonic, "Harmonic conductivity coarsening");

  EvaluateArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "Dice / Hausdorff and field error report");
  evaluate->add_option("seg", ea.seg, "Segmentation under test")->required();
  evaluate->add_option("truth", ea.truth, "Reference segmentation")->required();
  evaluate->add_option("out", ea.out, "CSV report")->required();
  evaluate->add_option("--efield", ea.efield, "|E| volume under test");
  evaluate->add_option("--efield-ref", ea.efield_ref, "Reference |E| volume");
  evaluate->add_option("--labels", ea.labels, "Labels to report, comma separated")->delimiter(',');
  evaluate->add_option("--hd", ea.hd, "symmetric or directed");
  evaluate->add_option("--percentile", ea.percentile, "Field capping percentile");
  evaluate->add_option("--json", ea.json, "Also write the report as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*phantom) cmd_phantom(pa);
    if (*trainc) cmd_train(ta);
    if (*segment) cmd_segment(sa);
    if (*assemblec) cmd_assemble(aa);
    if (*solvec) cmd_solve(va);
    if (*evaluate) cmd_evaluate(ea);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}
