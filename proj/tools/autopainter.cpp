// autopainter command line: preprocessing, training, inference, serving and vote analysis.

#include <autopainter/autopainter.hpp>
#include <autopainter/service.hpp>

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

namespace ap = autopainter;
namespace fs = std::filesystem;

namespace {

std::vector<fs::path> list_pngs(const fs::path& p) {
  std::vector<fs::path> out;
  if (fs::is_directory(p)) {
    for (const auto& e : fs::directory_iterator(p))
      if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    std::sort(out.begin(), out.end());
  } else {
    out.push_back(p);
  }
  return out;
}

ap::BlockGrowthParams growth_options(CLI::App* cmd, ap::BlockGrowthParams& p) {
  cmd->add_option("--blur", p.blur_sigma, "Gaussian sigma applied to the target before sampling colours");
  cmd->add_option("--min-blocks", p.min_blocks);
  cmd->add_option("--max-blocks", p.max_blocks);
  cmd->add_option("--block-side", p.block_side, "Side of one block cell in pixels");
  cmd->add_option("--block-step", p.step, "Growth step in pixels");
  cmd->add_option("--tau", p.threshold, "Mean colour drift that stops growth");
  cmd->add_option("--max-steps", p.max_steps);
  return p;
}

void add_xdog_options(CLI::App* cmd, ap::XdogParams& x) {
  cmd->add_option("--sigma", x.sigma, "Narrow Gaussian sigma");
  cmd->add_option("--k", x.k, "Wide/narrow sigma ratio");
  cmd->add_option("--eps", x.epsilon, "Soft threshold");
  cmd->add_option("--phi", x.phi, "Threshold sharpness");
}

ap::RasterImage load_sketch(const fs::path& p) { return ap::read_png(p); }

std::vector<ap::Scribble> load_scribbles(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) throw ap::LoadError("cannot open scribbles " + path);
  try {
    return ap::parse_scribbles(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ap::RequestError(path + ": " + e.what());
  }
}

ap::PaintService* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sketch-to-cartoon colourisation toolkit"};
  app.require_subcommand(1);

  // extract-sketch
  auto* ex = app.add_subcommand("extract-sketch", "XDoG line extraction, one output per gamma");
  std::string ex_in, ex_out;
  std::vector<double> ex_gammas = ap::default_sketch_gammas();
  ap::XdogParams ex_x;
  ex->add_option("--input", ex_in, "PNG file or directory")->required();
  ex->add_option("--output", ex_out, "Output directory")->required();
  ex->add_option("--gamma", ex_gammas, "Gamma values");
  add_xdog_options(ex, ex_x);

  // make-hints
  auto* mh = app.add_subcommand("make-hints", "Synthesize colour-block hints from target/sketch pairs");
  std::string mh_targets, mh_sketches, mh_out;
  std::uint64_t mh_seed = 0;
  ap::BlockGrowthParams mh_p;
  mh->add_option("--targets", mh_targets, "Directory of colour targets")->required();
  mh->add_option("--sketches", mh_sketches, "Directory of sketches with matching file names")->required();
  mh->add_option("--out", mh_out)->required();
  mh->add_option("--seed", mh_seed);
  growth_options(mh, mh_p);

  // build-dataset
  auto* bd = app.add_subcommand("build-dataset", "Crop, resize, extract sketches and hints, split 90/10");
  std::string bd_images, bd_out;
  ap::BuildOptions bd_opt;
  double bd_frac = 0.9;
  bool bd_no_hints = false;
  ap::BlockGrowthParams bd_p;
  bd->add_option("--images", bd_images)->required();
  bd->add_option("--out", bd_out)->required();
  bd->add_option("--size", bd_opt.size);
  bd->add_option("--gammas", bd_opt.gammas);
  bd->add_option("--train-frac", bd_frac);
  bd->add_option("--seed", bd_opt.seed);
  bd->add_option("--workers", bd_opt.workers);
  bd->add_flag("--no-hints", bd_no_hints, "Pair bare sketches with targets");
  add_xdog_options(bd, bd_opt.xdog);
  growth_options(bd, bd_p);

  // train
  auto* tr = app.add_subcommand("train", "Adversarial training from a JSON config");
  std::string tr_config, tr_resume;
  std::optional<std::int64_t> tr_steps;
  tr->add_option("--config", tr_config)->required();
  tr->add_option("--resume", tr_resume, "Checkpoint to continue from");
  tr->add_option("--steps", tr_steps, "Override total_steps");

  // init-extractor
  auto* ie = app.add_subcommand("init-extractor", "Write a seeded feature-extractor checkpoint");
  std::string ie_out;
  int ie_tap = 4;
  std::uint64_t ie_seed = 0;
  ie->add_option("--out", ie_out)->required();
  ie->add_option("--tap", ie_tap);
  ie->add_option("--seed", ie_seed);

  // paint
  auto* pt = app.add_subcommand("paint", "Colourise one sketch");
  std::string pt_ckpt, pt_sketch, pt_scribbles, pt_out;
  std::optional<std::uint64_t> pt_seed;
  int pt_bench = 0;
  pt->add_option("--checkpoint", pt_ckpt)->required();
  pt->add_option("--sketch", pt_sketch)->required();
  pt->add_option("--scribbles", pt_scribbles, "Scribble JSON");
  pt->add_option("--seed", pt_seed, "Noise seed (zero noise when omitted)");
  pt->add_option("--out", pt_out);
  pt->add_option("--bench", pt_bench, "Time N paints against the 1 s target");

  // serve
  auto* sv = app.add_subcommand("serve", "HTTP service: /paint, /health, /model");
  std::string sv_ckpt;
  ap::ServiceOptions sv_opt;
  sv->add_option("--checkpoint", sv_ckpt)->required();
  sv->add_option("--host", sv_opt.host);
  sv->add_option("--port", sv_opt.port);
  sv->add_option("--workers", sv_opt.workers);

  // evaluate-votes
  auto* ev = app.add_subcommand("evaluate-votes", "Popularity index from vote records");
  std::string ev_records;
  double ev_c = 1.0;
  bool ev_sample = false;
  ev->add_option("--records", ev_records, "JSONL vote records (- for stdin)")->required();
  ev->add_option("--c", ev_c, "Smoothing constant");
  ev->add_flag("--sample-variance", ev_sample, "Use n-1 in the per-image variance");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ex) {
      ap::XdogParams x = ex_x;
      fs::create_directories(ex_out);
      for (const fs::path& f : list_pngs(ex_in)) {
        const ap::RasterImage img = ap::read_png(f);
        const auto set = ap::extract_sketch_set(img, ex_gammas, x);
        for (std::size_t i = 0; i < set.size(); ++i) {
          const fs::path out = fs::path(ex_out) / (f.stem().string() + "_g" + ap::gamma_tag(ex_gammas[i]) + ".png");
          ap::write_png(out, set[i]);
          std::cout << out.string() << "\n";
        }
      }
    } else if (*mh) {
      fs::create_directories(mh_out);
      std::size_t i = 0;
      for (const fs::path& t : list_pngs(mh_targets)) {
        const fs::path s = fs::path(mh_sketches) / t.filename();
        if (!fs::exists(s)) {
          std::cerr << "skip " << t.string() << ": no sketch " << s.string() << "\n";
          continue;
        }
        const auto hint = ap::synthesize_hints(ap::read_png(t), ap::to_grayscale(ap::read_png(s)), mh_p,
                                               ap::mix_seed(mh_seed, i++));
        ap::write_png(fs::path(mh_out) / t.filename(), hint.image);
      }
    } else if (*bd) {
      if (bd_no_hints) bd_opt.hints.reset();
      else bd_opt.hints = bd_p;
      const ap::BuildResult built = ap::build_pairs(bd_images, bd_out, bd_opt, std::cerr);
      auto [train, test] = ap::split(built.manifest, bd_frac, bd_opt.seed);
      ap::write_manifest(train, fs::path(bd_out) / "train.manifest.jsonl");
      ap::write_manifest(test, fs::path(bd_out) / "test.manifest.jsonl");
      std::cout << "pairs " << built.manifest.entries.size() << " (train " << train.entries.size() << ", test "
                << test.entries.size() << "), skipped " << built.skipped << "\n";
    } else if (*tr) {
      std::ifstream in(tr_config);
      if (!in) throw ap::ConfigError("cannot open config " + tr_config);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw ap::ConfigError(tr_config + ": " + e.what());
      }
      ap::TrainConfig cfg = ap::TrainConfig::from_json(j);
      const fs::path base = fs::path(tr_config).parent_path();
      auto rebase = [&](std::string& p) {
        if (!p.empty() && fs::path(p).is_relative()) p = (base / p).string();
      };
      rebase(cfg.train_manifest);
      rebase(cfg.feature_checkpoint);
      rebase(cfg.out_dir);
      if (!tr_resume.empty()) cfg.resume_from = tr_resume;
      if (tr_steps) cfg.total_steps = *tr_steps;
      const ap::TrainSummary s = ap::train(cfg, &std::cout);
      std::cout << "final " << s.final_checkpoint.string() << " " << s.last.to_json().dump() << "\n";
    } else if (*ie) {
      const auto p = ap::Vgg16Extractor<float>::surrogate_params(ie_tap, ie_seed);
      ap::save_checkpoint(ie_out, {{"features", &p}}, {{"source", "seeded surrogate"}});
      std::cout << ie_out << "\n";
    } else if (*pt) {
      const ap::Painter painter = ap::Painter::from_checkpoint(pt_ckpt);
      const ap::RasterImage sketch = load_sketch(pt_sketch);
      if (pt_bench > 0) {
        const ap::BenchReport r = ap::bench_paint(painter, sketch, pt_bench);
        std::cout << "bench runs=" << r.runs << " mean=" << r.mean_seconds << "s max=" << r.max_seconds
                  << "s target=" << r.target_seconds << "s " << (r.within_target() ? "within" : "over")
                  << " target\n";
      }
      if (!pt_out.empty()) {
        const ap::PaintResult res = painter.paint(sketch, load_scribbles(pt_scribbles), pt_seed);
        ap::write_png(pt_out, res.image);
        std::cout << pt_out << " crop=" << res.crop.x << "," << res.crop.y << "," << res.crop.side << "\n";
      } else if (pt_bench == 0) {
        throw ap::ParameterError("paint: give --out and/or --bench");
      }
    } else if (*sv) {
      auto painter = std::make_shared<const ap::Painter>(ap::Painter::from_checkpoint(sv_ckpt));
      ap::PaintService service(painter, sv_opt);
      const int port = service.bind();
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "serving " << painter->model_id() << " on " << sv_opt.host << ":" << port << std::endl;
      service.run();
      g_service = nullptr;
    } else if (*ev) {
      std::vector<ap::VoteRecord> records;
      if (ev_records == "-") {
        records = ap::read_vote_records(std::cin);
      } else {
        std::ifstream in(ev_records);
        if (!in) throw ap::LoadError("cannot open " + ev_records);
        records = ap::read_vote_records(in);
      }
      const ap::IngestResult ing = ap::ingest_votes(records);
      const ap::PopReport rep =
          ap::summarize(ing.tallies, ev_c, ev_sample ? ap::VarianceKind::kSample : ap::VarianceKind::kPopulation);
      std::cout << rep.to_table() << "\n" << rep.to_json().dump(2) << "\n";
      if (ing.rejected) std::cerr << "rejected " << ing.rejected << " records with best == worst\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
