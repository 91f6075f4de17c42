#include "panodapt/cli.hpp"

#include <CLI11.hpp>
#include <iostream>

#include "panodapt/metrics.hpp"
#include "panodapt/synthdata.hpp"
#include "panodapt/trainer.hpp"
#include "panodapt/viz.hpp"

namespace panodapt::cli {

namespace fs = std::filesystem;

namespace {

// --config loads first; every other knob funnels through key=value pairs in
// command-line order, so the last mention wins
struct CommonOpts {
  std::string config;
  std::vector<std::string> sets;

  data::TrainConfig build() const {
    data::TrainConfig cfg =
        config.empty() ? data::TrainConfig{} : data::parse_config_file(config);
    for (const std::string& kv : sets) {
      size_t eq = kv.find('=');
      require(eq != std::string::npos && eq > 0, "--set expects key=value, got: " + kv);
      data::apply_config_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    data::validate_config(cfg);
    return cfg;
  }
};

void add_common(CLI::App* sub, CommonOpts& o) {
  sub->add_option("--config", o.config, "key=value config file, applied before other flags");
  sub->add_option("--set", o.sets, "override one config key (key=value, repeatable)");
  auto sugar = [&o, sub](const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(
        flag, [&o, key](const std::string& v) { o.sets.push_back(key + "=" + v); }, help);
  };
  sugar("--seed", "seed", "RNG seed");
  sugar("--threads", "threads", "worker threads");
  sugar("--max-its", "max_its", "adaptation iterations");
}

seg::SegModel<float> load_student(const data::TrainConfig& cfg, const fs::path& ckpt_path) {
  ckpt::Checkpoint c = ckpt::load_checkpoint(ckpt_path);
  require(c.has_prefix("student"), "not a model checkpoint: " + ckpt_path.string());
  seg::SegModel<float> m;
  Rng r(0);
  m.init(seg::SegConfig::from(cfg), r);
  c.load_params("student", m.ps);
  return m;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"multi-source adaptation toolkit for panoramic segmentation"};
  app.require_subcommand(1);

  CommonOpts gen_o, pre_o, ada_o, eval_o, vd_o, vg_o;

  auto* gen = app.add_subcommand("gen-data", "render a synthetic multi-domain benchmark dataset");
  std::string gen_out;
  bool gen_force = false;
  gen->add_option("--out", gen_out, "dataset root to create")->required();
  gen->add_flag("--force", gen_force, "overwrite a non-empty dataset root");
  add_common(gen, gen_o);
  {
    auto sugar = [&](const std::string& flag, const std::string& key, const std::string& help) {
      gen->add_option_function<std::string>(
          flag, [&gen_o, key](const std::string& v) { gen_o.sets.push_back(key + "=" + v); },
          help);
    };
    sugar("--count", "gen_count", "images per domain");
    sugar("--pin-domains", "gen_pin_domains", "number of pinhole source domains");
    sugar("--pan-domains", "gen_pan_domains", "number of panoramic source domains");
    sugar("--distortion", "distortion", "panoramic distortion strength");
    sugar("--noise", "noise", "pixel noise level");
    sugar("--height", "image_h", "image height");
    sugar("--width", "image_w", "image width");
  }

  auto* pre = app.add_subcommand("pretrain", "train the segmenter on the labeled source domains");
  std::string pre_data, pre_out;
  pre->add_option("--data", pre_data, "dataset root")->required();
  pre->add_option("--out", pre_out, "output directory for the checkpoint")->required();
  add_common(pre, pre_o);

  auto* ada = app.add_subcommand("adapt", "run target adaptation from a pretrained checkpoint");
  std::string ada_data, ada_out, ada_pre, ada_resume;
  bool ada_no_usm = false;
  ada->add_option("--data", ada_data, "dataset root")->required();
  ada->add_option("--out", ada_out, "output directory (ledger + checkpoints)")->required();
  ada->add_option("--pretrained", ada_pre, "pretraining checkpoint to start from");
  ada->add_option("--resume", ada_resume, "full training checkpoint to continue");
  ada->add_flag("--no-usm", ada_no_usm, "disable morphing: gating-only adaptation");
  add_common(ada, ada_o);

  auto* eva = app.add_subcommand("eval", "score a checkpoint against held-out target labels");
  std::string eva_data, eva_ckpt, eva_out;
  eva->add_option("--data", eva_data, "dataset root (must contain target_eval)")->required();
  eva->add_option("--ckpt", eva_ckpt, "checkpoint to score")->required();
  eva->add_option("--out", eva_out, "directory for metrics.csv / metrics.md")->required();
  add_common(eva, eval_o);

  auto* vd = app.add_subcommand("viz-deform",
                                "render a morph panel with the predicted deformation field");
  std::string vd_data, vd_ckpt, vd_out, vd_ref = "target";
  int vd_pin = 0, vd_ref_idx = 0;
  vd->add_option("--data", vd_data, "dataset root")->required();
  vd->add_option("--ckpt", vd_ckpt, "full training checkpoint")->required();
  vd->add_option("--out", vd_out, "output PNG path")->required();
  vd->add_option("--pin-index", vd_pin, "pinhole image index");
  vd->add_option("--ref", vd_ref, "reference view: target or pan");
  vd->add_option("--ref-index", vd_ref_idx, "reference image index");
  add_common(vd, vd_o);

  auto* vg = app.add_subcommand("viz-gating",
                                "render the branch-gating weight map for a target image");
  std::string vg_data, vg_ckpt, vg_out;
  int vg_idx = 0;
  vg->add_option("--data", vg_data, "dataset root")->required();
  vg->add_option("--ckpt", vg_ckpt, "checkpoint to visualize")->required();
  vg->add_option("--out", vg_out, "output PNG path")->required();
  vg->add_option("--target-index", vg_idx, "target image index");
  add_common(vg, vg_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      data::TrainConfig cfg = gen_o.build();
      synth::write_benchmark(cfg, gen_out, gen_force);
      std::cout << "wrote dataset to " << gen_out << " (" << cfg.gen_pin_domains
                << " pinhole + " << cfg.gen_pan_domains << " panoramic domains, "
                << cfg.gen_count << " images each)\n";
    } else if (pre->parsed()) {
      data::TrainConfig cfg = pre_o.build();
      data::DomainSet ds = data::load_dataset(pre_data, cfg);
      fs::path p = train::source_pretrain(cfg, ds, pre_out);
      std::cout << "wrote " << p.string() << "\n";
    } else if (ada->parsed()) {
      data::TrainConfig cfg = ada_o.build();
      require(!ada_pre.empty() || !ada_resume.empty(), "adapt needs --pretrained or --resume");
      data::DomainSet ds = data::load_dataset(ada_data, cfg);
      train::AdaptOptions opts;
      opts.no_usm = ada_no_usm;
      opts.resume = ada_resume;
      fs::path p = train::run_adaptation(cfg, ds, ada_pre, ada_out, opts);
      std::cout << "wrote " << p.string() << "\n";
    } else if (eva->parsed()) {
      data::TrainConfig cfg = eval_o.build();
      nn::set_threads(cfg.threads);
      data::DomainSet ds = data::load_dataset(eva_data, cfg);
      auto labels = data::load_target_eval(eva_data);
      require(!labels.empty(), "no evaluation labels under " + eva_data);
      train::Trainer tr(cfg, ds);
      ckpt::Checkpoint c = ckpt::load_checkpoint(eva_ckpt);
      require(c.has_prefix("student"), "not a model checkpoint: " + eva_ckpt);
      tr.restore(c, false);
      metrics::EvalSummary s = tr.evaluate_target(labels);
      fs::create_directories(eva_out);
      metrics::write_metrics_csv(s, fs::path(eva_out) / "metrics.csv");
      metrics::write_metrics_markdown(s, fs::path(eva_out) / "metrics.md");
      std::cout << "target mIoU: " << fmt(s.overall.miou) << "\n";
      for (int i = 0; i < metrics::kOmniSlices; ++i)
        std::cout << "  " << i * 45 << "-" << (i + 1) * 45 << " deg: " << fmt(s.angle_miou[i])
                  << "\n";
    } else if (vd->parsed()) {
      data::TrainConfig cfg = vd_o.build();
      nn::set_threads(cfg.threads);
      data::DomainSet ds = data::load_dataset(vd_data, cfg);
      ckpt::Checkpoint c = ckpt::load_checkpoint(vd_ckpt);
      require(c.has_prefix("F"),
              "checkpoint has no deformation network; pass a full training checkpoint");
      train::Trainer tr(cfg, ds);
      tr.restore(c, true);
      require(vd_pin >= 0 && vd_pin < int(ds.pin[0].size()), "pin-index out of range");
      const data::LabeledImage& x_i = ds.pin[0][vd_pin];
      require(vd_ref == "target" || vd_ref == "pan", "--ref must be target or pan");
      const std::vector<data::LabeledImage>& refs = vd_ref == "target" ? ds.target : ds.pan[0];
      require(vd_ref_idx >= 0 && vd_ref_idx < int(refs.size()), "ref-index out of range");
      viz::write_deformation_panel(tr.F, x_i, refs[vd_ref_idx], vd_out);
      std::cout << "wrote " << vd_out << "\n";
    } else if (vg->parsed()) {
      data::TrainConfig cfg = vg_o.build();
      nn::set_threads(cfg.threads);
      data::DomainSet ds = data::load_dataset(vg_data, cfg);
      require(vg_idx >= 0 && vg_idx < int(ds.target.size()), "target-index out of range");
      seg::SegModel<float> m = load_student(cfg, vg_ckpt);
      viz::write_gating_panel(m, ds.target[vg_idx].pixels, vg_out);
      std::cout << "wrote " << vg_out << "\n";
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace panodapt::cli
