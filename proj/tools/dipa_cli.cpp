// dipa: generate patches, evaluate them, re-render reports, serve the API.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "dipa/dipa.hpp"

namespace {

namespace fs = std::filesystem;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Flag values that override fields of an AttackConfig when given.
struct ConfigFlags {
  std::string config_file;
  std::optional<std::string> variant;
  std::optional<double> lambda_tv;
  std::optional<int> steps;
  std::optional<double> step_size;
  std::optional<int> patch_side;
  std::optional<int> pool_kernel;
  std::optional<int> pool_stride;
  std::optional<double> center_x, center_y, scale, rotation;
  std::optional<double> jitter_dx, jitter_dy, jitter_dscale, jitter_drot;
  std::optional<int> jitter_samples;
  std::optional<std::string> ensemble;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "AttackConfig JSON used as the base")
        ->check(CLI::ExistingFile);
    app->add_option("--variant", variant, "dipa | dipa-tv");
    app->add_option("--lambda-tv", lambda_tv, "TV weight (dipa-tv only)");
    app->add_option("--steps", steps, "optimizer steps");
    app->add_option("--step-size", step_size, "Adam step size");
    app->add_option("--patch-side", patch_side, "patch side in pixels");
    app->add_option("--pool-kernel", pool_kernel, "median pool kernel (odd)");
    app->add_option("--pool-stride", pool_stride, "median pool stride");
    app->add_option("--center-x", center_x, "placement center x in [0,1]");
    app->add_option("--center-y", center_y, "placement center y in [0,1]");
    app->add_option("--scale", scale, "patch side / min(H, W)");
    app->add_option("--rotation", rotation, "placement rotation, degrees");
    app->add_option("--jitter-dx", jitter_dx);
    app->add_option("--jitter-dy", jitter_dy);
    app->add_option("--jitter-dscale", jitter_dscale);
    app->add_option("--jitter-drot", jitter_drot);
    app->add_option("--jitter-samples", jitter_samples,
                    "placements averaged per step");
    app->add_option("--ensemble", ensemble, "comma-separated embedder ids");
    app->add_option("--seed", seed, "base seed");
  }

  dipa::AttackConfig build() const {
    dipa::AttackConfig cfg;
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      try {
        cfg = dipa::json::parse(in).get<dipa::AttackConfig>();
      } catch (const dipa::json::exception& e) {
        throw dipa::ValidationError("config " + config_file + ": " + e.what());
      }
    }
    if (variant) {
      cfg.variant = dipa::parse_variant(*variant);
      cfg.lambda_tv =
          cfg.variant == dipa::Variant::kDipaTv ? dipa::kDefaultLambdaTv : 0.0;
    }
    if (lambda_tv) cfg.lambda_tv = *lambda_tv;
    if (steps) cfg.steps = *steps;
    if (step_size) cfg.step_size = *step_size;
    if (patch_side) cfg.patch_side = *patch_side;
    if (pool_kernel) cfg.pool_kernel = *pool_kernel;
    if (pool_stride) cfg.pool_stride = *pool_stride;
    if (center_x) cfg.placement.center_x = *center_x;
    if (center_y) cfg.placement.center_y = *center_y;
    if (scale) cfg.placement.scale = *scale;
    if (rotation) cfg.placement.rotation_deg = *rotation;
    if (jitter_dx) cfg.placement.jitter.dx = *jitter_dx;
    if (jitter_dy) cfg.placement.jitter.dy = *jitter_dy;
    if (jitter_dscale) cfg.placement.jitter.dscale = *jitter_dscale;
    if (jitter_drot) cfg.placement.jitter.drot = *jitter_drot;
    if (jitter_samples) cfg.jitter_samples = *jitter_samples;
    if (ensemble) {
      cfg.ensemble_ids.clear();
      std::stringstream ss(*ensemble);
      std::string id;
      while (std::getline(ss, id, ',')) {
        if (!id.empty()) cfg.ensemble_ids.push_back(id);
      }
    }
    if (seed) cfg.seed = *seed;
    cfg.validate();
    return cfg;
  }
};

dipa::EmbedderRegistry load_registry(const std::string& manifest) {
  return manifest.empty() ? dipa::EmbedderRegistry::builtin()
                          : dipa::EmbedderRegistry::from_manifest_file(manifest);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw dipa::Error("cannot write " + path.string());
  out << text;
}

int cmd_generate(const std::string& image, const std::string& out_dir,
                 const ConfigFlags& flags, int count,
                 const std::string& manifest, const std::string& reference,
                 bool quiet) {
  dipa::AttackConfig cfg;
  dipa::ImageTensor photo;
  std::optional<dipa::ImageTensor> ref;
  dipa::Ensemble ensemble;
  try {
    cfg = flags.build();
    if (count < 1) throw dipa::ValidationError("--count must be >= 1");
    photo = dipa::load_image(image);
    if (!reference.empty()) ref = dipa::load_image(reference);
    ensemble = dipa::load_ensemble(cfg.ensemble_ids, load_registry(manifest));
  } catch (const dipa::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  const dipa::DodgingObjective objective(photo, ensemble, cfg, ref);
  int last_pct = -1;
  const auto patches = dipa::generate_patch_set(
      objective, count, [&](int done, int total) {
        if (quiet || total == 0) return;
        const int pct = done * 100 / total;
        if (pct != last_pct && pct % 10 == 0) {
          std::cerr << "progress " << pct << "%\n";
          last_pct = pct;
        }
      });
  for (std::size_t k = 0; k < patches.size(); ++k) {
    dipa::export_patch(out_dir, static_cast<int>(k), patches[k]);
    std::cout << "patch_" << k << " seed=" << patches[k].metadata.seed
              << " final_loss=" << dipa::format_exact(patches[k].metadata.final_loss)
              << "\n";
  }
  return 0;
}

int cmd_evaluate(const std::string& plan_path, const std::string& out_dir,
                 const std::string& manifest, std::optional<std::uint64_t> seed,
                 bool quiet) {
  dipa::BenchmarkPlan plan;
  dipa::EmbedderRegistry registry;
  try {
    plan = dipa::load_plan(plan_path);
    if (seed) plan.seed = *seed;
    registry = load_registry(manifest);
    plan.validate(registry);
  } catch (const dipa::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  const auto result = dipa::run_benchmark(plan, registry, [&](const std::string& m) {
    if (!quiet) std::cerr << m << "\n";
  });
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_text(dir / "report.md",
             dipa::render_report(result.reports, dipa::ReportFormat::kMarkdown));
  write_text(dir / "report.csv",
             dipa::render_report(result.reports, dipa::ReportFormat::kCsv));
  write_text(dir / "reports.json", dipa::json(result.reports).dump(2) + "\n");
  {
    std::ofstream log(dir / "trials.ndjson", std::ios::binary);
    dipa::write_trials_ndjson(log, result.trials);
  }
  std::cout << dipa::render_report(result.reports, dipa::ReportFormat::kMarkdown);
  return 0;
}

int cmd_report(const std::string& in_path, const std::string& format,
               const std::string& out_path) {
  std::string text;
  try {
    const auto fmt = dipa::parse_report_format(format);
    std::ifstream in(in_path, std::ios::binary);
    if (!in) throw dipa::ValidationError("cannot open " + in_path);
    const auto trials = dipa::read_trials_ndjson(in);
    text = dipa::render_report(dipa::aggregate_by_subject_and_method(trials), fmt);
  } catch (const dipa::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_text(out_path, text);
  }
  return 0;
}

std::atomic<bool> g_terminate{false};

extern "C" void on_signal(int) { g_terminate = true; }

int cmd_serve(const std::string& config_path, std::optional<int> port,
              std::optional<int> workers, const std::string& job_dir,
              const std::string& manifest) {
  dipa::service::ServiceConfig cfg;
  dipa::EmbedderRegistry registry;
  try {
    cfg = dipa::service::load_service_config(config_path);
    if (port) cfg.port = *port;
    if (workers) cfg.workers = *workers;
    if (!job_dir.empty()) cfg.job_dir = job_dir;
    if (!manifest.empty()) cfg.manifest = manifest;
    registry = load_registry(cfg.manifest.string());
    cfg.base_config.validate();
    if (cfg.workers < 1) throw dipa::ValidationError("--workers must be >= 1");
  } catch (const dipa::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  dipa::service::StoreOptions opts;
  opts.root = cfg.job_dir;
  opts.max_upload_bytes = cfg.max_upload_bytes;
  opts.retain_uploads = cfg.retain_uploads;
  opts.lease = cfg.lease;
  dipa::service::JobStore store(opts);
  dipa::service::HttpService http(cfg, store);
  int bound = 0;
  try {
    bound = http.start();
  } catch (const dipa::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  std::signal(SIGTERM, on_signal);
  std::signal(SIGINT, on_signal);
  dipa::service::WorkerPool pool(store, registry, cfg.workers);
  std::cout << "listening on " << cfg.host << ":" << bound << std::endl;
  while (!g_terminate) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  std::cout << "shutting down" << std::endl;
  http.stop();
  pool.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DiPA adversarial patch toolkit"};
  app.require_subcommand(1);

  ConfigFlags gen_flags;
  std::string gen_image, gen_out = "patches", gen_manifest, gen_reference;
  int gen_count = 5;
  bool gen_quiet = false;
  auto* gen = app.add_subcommand("generate", "optimize a patch set for one photo");
  gen->add_option("--image", gen_image, "face photo (PNG)")
      ->required()
      ->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--count", gen_count, "patches to generate");
  gen->add_option("--manifest", gen_manifest, "embedder manifest JSON")
      ->check(CLI::ExistingFile);
  gen->add_option("--reference", gen_reference,
                  "embed this image instead of --image as the clean reference")
      ->check(CLI::ExistingFile);
  gen->add_flag("--quiet", gen_quiet);
  gen_flags.attach(gen);

  std::string ev_plan, ev_out = "report", ev_manifest;
  std::optional<std::uint64_t> ev_seed;
  bool ev_quiet = false;
  auto* ev = app.add_subcommand("evaluate", "run a benchmark plan");
  ev->add_option("--plan", ev_plan, "plan JSON")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", ev_out, "output directory");
  ev->add_option("--manifest", ev_manifest, "embedder manifest JSON")
      ->check(CLI::ExistingFile);
  ev->add_option("--seed", ev_seed, "overrides the plan seed");
  ev->add_flag("--quiet", ev_quiet);

  std::string rep_in, rep_format = "markdown", rep_out;
  auto* rep = app.add_subcommand("report", "re-render reports from a trial log");
  rep->add_option("--in", rep_in, "trials.ndjson")->required()->check(CLI::ExistingFile);
  rep->add_option("--format", rep_format, "markdown | csv");
  rep->add_option("--out", rep_out, "write here instead of stdout");

  std::string srv_config, srv_job_dir, srv_manifest;
  std::optional<int> srv_port, srv_workers;
  auto* srv = app.add_subcommand("serve", "run the HTTP job service");
  srv->add_option("--config", srv_config, "service config JSON")
      ->check(CLI::ExistingFile);
  srv->add_option("--port", srv_port, "listen port (0 = any)");
  srv->add_option("--workers", srv_workers, "worker threads");
  srv->add_option("--job-dir", srv_job_dir, "job storage directory");
  srv->add_option("--manifest", srv_manifest, "embedder manifest JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) {
      return cmd_generate(gen_image, gen_out, gen_flags, gen_count, gen_manifest,
                          gen_reference, gen_quiet);
    }
    if (*ev) return cmd_evaluate(ev_plan, ev_out, ev_manifest, ev_seed, ev_quiet);
    if (*rep) return cmd_report(rep_in, rep_format, rep_out);
    if (*srv) {
      return cmd_serve(srv_config, srv_port, srv_workers, srv_job_dir,
                       srv_manifest);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
