// Command-line front end: synthetic data generation, training, evaluation,
// gradient checking, embedding export and metric plots.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "cstl/config.hpp"
#include "cstl/dataset.hpp"
#include "cstl/evalproto.hpp"
#include "cstl/gradcheck_suite.hpp"
#include "cstl/model_io.hpp"
#include "cstl/parallel.hpp"
#include "cstl/svg_plot.hpp"
#include "cstl/synthetic.hpp"
#include "cstl/trainer.hpp"

namespace {

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void print_kv(const std::string& key, const std::string& value) {
  std::cout << "config: " << key << " = " << value << "\n";
}

std::string scales_string(const cstl::TrainConfig& cfg) {
  std::string s;
  if (cfg.scale_frame) s += "frame,";
  if (cfg.scale_short) s += "short,";
  if (cfg.scale_long) s += "long,";
  if (!s.empty()) s.pop_back();
  return s;
}

void print_train_config(const cstl::TrainConfig& cfg) {
  print_kv("p", std::to_string(cfg.p));
  print_kv("k", std::to_string(cfg.k));
  print_kv("frames", std::to_string(cfg.frames));
  print_kv("lr", std::to_string(cfg.lr));
  print_kv("iterations", std::to_string(cfg.iterations));
  print_kv("margin", std::to_string(cfg.margin));
  print_kv("heads", std::to_string(cfg.heads));
  print_kv("parts", std::to_string(cfg.parts));
  print_kv("embed_dim", std::to_string(cfg.embed_dim));
  print_kv("local_variant", cstl::local_variant_name(cfg.local));
  print_kv("scales", scales_string(cfg));
  print_kv("baseline", cfg.baseline ? "true" : "false");
  print_kv("backbone", cfg.backbone);
  print_kv("resolution", std::to_string(cfg.in_h) + "x" + std::to_string(cfg.in_w));
  print_kv("seed", std::to_string(cfg.seed));
  print_kv("checkpoint_interval", std::to_string(cfg.checkpoint_interval));
  if (!cfg.resume.empty()) print_kv("resume", cfg.resume);
}

// Embeds every indexed sequence in test mode (all frames).
std::vector<cstl::EmbeddingRecord> embed_all(
    cstl::CstlModel<float>& model, const cstl::DatasetIndex& index,
    std::vector<int>* seq_ids) {
  std::vector<cstl::EmbeddingRecord> records;
  records.reserve(index.entries.size());
  for (const auto& entry : index.entries) {
    auto seq = cstl::load_sequence(index, entry);
    records.push_back(cstl::embed_sequence(model, seq));
    if (seq_ids) seq_ids->push_back(entry.seq);
  }
  return records;
}

int cmd_gen_data(const std::string& out, int ids, int seqs, int bg_seqs,
                 int cl_seqs, int frames, const std::string& views_csv,
                 std::uint64_t seed) {
  cstl::SyntheticSpec spec;
  spec.num_ids = ids;
  spec.seqs_per_id = seqs;
  spec.bg_seqs = bg_seqs;
  spec.cl_seqs = cl_seqs;
  spec.frames = frames;
  spec.views = cstl::parse_int_list(views_csv);
  spec.seed = seed;
  print_kv("out", out);
  print_kv("ids", std::to_string(ids));
  print_kv("seqs", std::to_string(seqs));
  print_kv("bg_seqs", std::to_string(bg_seqs));
  print_kv("cl_seqs", std::to_string(cl_seqs));
  print_kv("frames", std::to_string(frames));
  print_kv("views", views_csv);
  print_kv("seed", std::to_string(seed));
  const auto index = cstl::generate_synthetic(spec, out);
  std::cout << "wrote " << index.entries.size() << " sequences under " << out
            << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out_dir,
              const cstl::TrainConfig& cfg) {
  print_train_config(cfg);
  print_kv("data", data_dir);
  print_kv("out", out_dir);
  const auto index = cstl::load_dataset(data_dir);
  for (const auto& err : index.errors) std::cerr << "warning: " << err << "\n";
  for (const auto& warn : index.warnings) std::cerr << "warning: " << warn << "\n";
  if (index.entries.empty()) {
    throw std::runtime_error("no sequences under " + data_dir);
  }
  const auto result = cstl::train(cfg, index, out_dir);
  if (!result.ok) throw NumericalError(result.error);
  std::cout << "trained " << result.iterations_run << " iterations, final loss "
            << result.final_loss << "\n";
  std::cout << "checkpoint: " << result.checkpoint_path << "\n";
  std::cout << "metrics: " << result.metrics_path << "\n";
  return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt,
             bool exclude_identical_view, const std::string& scenario,
             const std::string& out_path, const std::string& ks_csv,
             int gallery_nm) {
  print_kv("data", data_dir);
  print_kv("ckpt", ckpt);
  print_kv("exclude_identical_view", exclude_identical_view ? "true" : "false");
  print_kv("scenario", scenario.empty() ? "standard" : scenario);
  print_kv("ks", ks_csv);
  print_kv("gallery_nm", std::to_string(gallery_nm));

  const auto ks = cstl::parse_int_list(ks_csv);
  const auto index = cstl::load_dataset(data_dir);
  if (index.entries.empty()) {
    throw std::runtime_error("no sequences under " + data_dir);
  }
  auto model = cstl::model_from_checkpoint(ckpt);

  cstl::RankReport report;
  if (scenario.rfind("mixed:", 0) == 0) {
    const int delta = std::stoi(scenario.substr(6));
    std::set<int> views;
    for (const auto& e : index.entries) views.insert(e.view);
    const auto pairs = cstl::mixed_view_pairs(
        std::vector<int>(views.begin(), views.end()), delta);

    // gallery: plain records; probes: half-and-half view pairs
    std::vector<cstl::EmbeddingRecord> gallery, probes;
    std::map<std::string, const cstl::SequenceEntry*> by_key;
    for (const auto& e : index.entries) {
      by_key[e.subject + "/" + e.condition + "-" + std::to_string(e.seq) + "/" +
             std::to_string(e.view)] = &e;
    }
    for (const auto& entry : index.entries) {
      const bool in_gallery = entry.condition == "NM" && entry.seq <= gallery_nm;
      if (in_gallery) {
        auto seq = cstl::load_sequence(index, entry);
        gallery.push_back(cstl::embed_sequence(model, seq));
        continue;
      }
      for (const auto& [va, vb] : pairs) {
        if (entry.view != va) continue;
        const auto partner = by_key.find(
            entry.subject + "/" + entry.condition + "-" +
            std::to_string(entry.seq) + "/" + std::to_string(vb));
        if (partner == by_key.end()) continue;
        auto seq_a = cstl::load_sequence(index, entry);
        auto seq_b = cstl::load_sequence(index, *partner->second);
        auto mixed = cstl::mixed_view_sequence(seq_a, seq_b);
        auto rec = cstl::embed_sequence(model, mixed);
        rec.paired_view = vb;
        probes.push_back(std::move(rec));
      }
    }
    report = cstl::rank_k_eval(gallery, probes, ks, exclude_identical_view);
  } else {
    std::vector<int> seq_ids;
    const auto records = embed_all(model, index, &seq_ids);
    std::vector<cstl::EmbeddingRecord> gallery, probes;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].condition == "NM" && seq_ids[i] <= gallery_nm) {
        gallery.push_back(records[i]);
      } else {
        probes.push_back(records[i]);
      }
    }
    if (scenario.rfind("unseen:", 0) == 0) {
      const auto test_views = cstl::parse_int_list(scenario.substr(7));
      report = cstl::scenario_unseen_views(gallery, probes, test_views, ks,
                                           exclude_identical_view);
    } else if (scenario.empty()) {
      report = cstl::rank_k_eval(gallery, probes, ks, exclude_identical_view);
    } else {
      throw std::invalid_argument("unknown scenario: " + scenario);
    }
  }

  const auto csv = cstl::rank_report_csv(report);
  std::cout << csv;
  if (exclude_identical_view) {
    std::cout << "# excluded-view leaks: " << report.excluded_leaks << "\n";
  }
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + out_path);
    out << csv;
  }
  return 0;
}

int cmd_gradcheck(const std::string& module) {
  print_kv("module", module.empty() ? "all" : module);
  const auto results = cstl::run_gradcheck_suite(module);
  if (results.empty()) {
    throw std::invalid_argument("no gradient checks match module '" + module + "'");
  }
  bool all_ok = true;
  double worst = 0.0;
  for (const auto& r : results) {
    std::printf("%-10s %-28s max_rel_err=%.3e limit=%.0e %s (%.2fs)\n",
                r.module.c_str(), r.name.c_str(), r.max_rel_error, r.limit,
                r.ok ? "ok" : "FAIL", r.seconds);
    worst = std::max(worst, r.max_rel_error);
    all_ok = all_ok && r.ok;
  }
  std::printf("max relative error over all checks: %.3e\n", worst);
  if (!all_ok) throw NumericalError("gradient check failed");
  return 0;
}

int cmd_embed(const std::string& data_dir, const std::string& ckpt,
              const std::string& out_path) {
  print_kv("data", data_dir);
  print_kv("ckpt", ckpt);
  print_kv("out", out_path);
  const auto index = cstl::load_dataset(data_dir);
  if (index.entries.empty()) {
    throw std::runtime_error("no sequences under " + data_dir);
  }
  auto model = cstl::model_from_checkpoint(ckpt);
  const auto records = embed_all(model, index, nullptr);
  cstl::write_embeddings(out_path, records);
  std::cout << "wrote " << records.size() << " embeddings to " << out_path << "\n";
  return 0;
}

int cmd_plot(const std::string& metrics_path, const std::string& out_path) {
  print_kv("metrics", metrics_path);
  print_kv("out", out_path);
  std::ifstream in(metrics_path);
  if (!in) throw std::runtime_error("cannot open " + metrics_path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const auto svg = cstl::render_curves_svg(
      ss.str(), std::filesystem::path(metrics_path).filename().string());
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + out_path);
  out << svg;
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"context-sensitive temporal gait recognition toolkit"};
  app.require_subcommand(1);
  int threads = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--threads", threads,
                 "worker cap; 1 guarantees bitwise determinism");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic gait dataset");
  std::string gen_out, gen_views = "0,90";
  int gen_ids = 20, gen_seqs = 4, gen_bg = 0, gen_cl = 0, gen_frames = 30;
  std::uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--ids", gen_ids, "number of identities")->required();
  gen->add_option("--seqs", gen_seqs, "NM sequences per identity")->required();
  gen->add_option("--frames", gen_frames, "frames per sequence")->required();
  gen->add_option("--views", gen_views, "comma-separated view angles")->required();
  gen->add_option("--seed", gen_seed, "generator seed")->required();
  gen->add_option("--bg-seqs", gen_bg, "BG sequences per identity");
  gen->add_option("--cl-seqs", gen_cl, "CL sequences per identity");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_data, tr_config, tr_out;
  cstl::TrainConfig tr_cfg;
  std::string tr_local = "fc", tr_scales = "frame,short,long";
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--config", tr_config, "key = value config file");
  tr->add_option("--out", tr_out, "output directory")->required();
  auto* opt_p = tr->add_option("--p", tr_cfg.p, "subjects per batch");
  auto* opt_k = tr->add_option("--k", tr_cfg.k, "sequences per subject");
  auto* opt_frames = tr->add_option("--frames", tr_cfg.frames, "clip length");
  auto* opt_lr = tr->add_option("--lr", tr_cfg.lr, "learning rate");
  auto* opt_iter = tr->add_option("--iterations", tr_cfg.iterations, "iterations");
  auto* opt_margin = tr->add_option("--margin", tr_cfg.margin, "triplet margin");
  auto* opt_heads = tr->add_option("--heads", tr_cfg.heads, "attention heads");
  auto* opt_parts = tr->add_option("--parts", tr_cfg.parts, "body parts K");
  auto* opt_embed = tr->add_option("--embed-dim", tr_cfg.embed_dim, "embedding dim");
  auto* opt_local = tr->add_option("--local", tr_local, "max | fc | attention");
  auto* opt_scales = tr->add_option("--scales", tr_scales, "enabled scales");
  auto* opt_baseline = tr->add_flag("--baseline", "backbone + pooling + head only");
  auto* opt_backbone = tr->add_option("--backbone", tr_cfg.backbone,
                                      "toy | full | four channel counts");
  std::string tr_resolution = "64x44";
  auto* opt_resolution = tr->add_option("--resolution", tr_resolution, "64x44 | 128x88");
  auto* opt_seed = tr->add_option("--seed", tr_cfg.seed, "training seed");
  auto* opt_ckpt_int = tr->add_option("--checkpoint-interval",
                                      tr_cfg.checkpoint_interval,
                                      "iterations between checkpoints");
  auto* opt_resume = tr->add_option("--resume", tr_cfg.resume, "checkpoint to resume");

  // eval
  auto* ev = app.add_subcommand("eval", "cross-view rank-k evaluation");
  std::string ev_data, ev_ckpt, ev_scenario, ev_out, ev_ks = "1,5,10,20";
  bool ev_exclude = false;
  int ev_gallery_nm = 4;
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
  ev->add_flag("--exclude-identical-view", ev_exclude,
               "drop same-view gallery items per probe");
  ev->add_option("--scenario", ev_scenario, "unseen:v1,v2,... | mixed:DELTA");
  ev->add_option("--out", ev_out, "also write the report CSV here");
  ev->add_option("--ks", ev_ks, "rank cutoffs");
  ev->add_option("--gallery-nm", ev_gallery_nm,
                 "NM sequences per subject forming the gallery");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  std::string gc_module;
  gc->add_option("--module", gc_module,
                 "restrict to one module (numkernel, backbone, mste, ata, "
                 "ssfl, output, losses, pipeline)");

  // embed
  auto* em = app.add_subcommand("embed", "export sequence embeddings");
  std::string em_data, em_ckpt, em_out;
  em->add_option("--data", em_data, "dataset directory")->required();
  em->add_option("--ckpt", em_ckpt, "checkpoint file")->required();
  em->add_option("--out", em_out, "embedding file")->required();

  // plot
  auto* pl = app.add_subcommand("plot", "render metric curves as SVG");
  std::string pl_metrics, pl_out;
  pl->add_option("--metrics", pl_metrics, "metrics CSV")->required();
  pl->add_option("--out", pl_out, "output SVG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cout << app.help() << std::flush;
    std::cerr << "ERROR 2: " << e.what() << "\n";
    return 2;
  }

  try {
    cstl::set_max_threads(threads);
    print_kv("threads", std::to_string(threads));
    if (gen->parsed()) {
      return cmd_gen_data(gen_out, gen_ids, gen_seqs, gen_bg, gen_cl,
                          gen_frames, gen_views, gen_seed);
    }
    if (tr->parsed()) {
      cstl::TrainConfig cfg;  // defaults, then config file, then flags
      if (!tr_config.empty()) {
        cstl::apply_config(cfg, cstl::load_config_file(tr_config));
      }
      if (opt_p->count()) cfg.p = tr_cfg.p;
      if (opt_k->count()) cfg.k = tr_cfg.k;
      if (opt_frames->count()) cfg.frames = tr_cfg.frames;
      if (opt_lr->count()) cfg.lr = tr_cfg.lr;
      if (opt_iter->count()) cfg.iterations = tr_cfg.iterations;
      if (opt_margin->count()) cfg.margin = tr_cfg.margin;
      if (opt_heads->count()) cfg.heads = tr_cfg.heads;
      if (opt_parts->count()) cfg.parts = tr_cfg.parts;
      if (opt_embed->count()) cfg.embed_dim = tr_cfg.embed_dim;
      if (opt_local->count()) cfg.local = cstl::parse_local_variant(tr_local);
      if (opt_scales->count()) {
        cfg.scale_frame = tr_scales.find("frame") != std::string::npos;
        cfg.scale_short = tr_scales.find("short") != std::string::npos;
        cfg.scale_long = tr_scales.find("long") != std::string::npos;
      }
      if (opt_baseline->count()) cfg.baseline = true;
      if (opt_backbone->count()) cfg.backbone = tr_cfg.backbone;
      if (opt_resolution->count()) {
        cstl::apply_config(cfg, {{"resolution", tr_resolution}});
      }
      if (opt_seed->count()) cfg.seed = tr_cfg.seed;
      if (opt_ckpt_int->count()) cfg.checkpoint_interval = tr_cfg.checkpoint_interval;
      if (opt_resume->count()) cfg.resume = tr_cfg.resume;
      cfg.validate();
      return cmd_train(tr_data, tr_out, cfg);
    }
    if (ev->parsed()) {
      return cmd_eval(ev_data, ev_ckpt, ev_exclude, ev_scenario, ev_out, ev_ks,
                      ev_gallery_nm);
    }
    if (gc->parsed()) return cmd_gradcheck(gc_module);
    if (em->parsed()) return cmd_embed(em_data, em_ckpt, em_out);
    if (pl->parsed()) return cmd_plot(pl_metrics, pl_out);
    std::cerr << "ERROR 2: no subcommand\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "ERROR 4: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "ERROR 2: " << e.what() << "\n";
    return 2;
  } catch (const std::runtime_error& e) {
    std::cerr << "ERROR 3: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "ERROR 1: " << e.what() << "\n";
    return 1;
  }
}
