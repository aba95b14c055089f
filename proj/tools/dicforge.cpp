// dicforge: synthetic DIC dataset generation, displacement-network
// training, and Monte-Carlo-dropout inference from one binary.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "dicforge/checkpoint.hpp"
#include "dicforge/dataset.hpp"
#include "dicforge/metrics.hpp"
#include "dicforge/nn.hpp"
#include "dicforge/png_io.hpp"
#include "dicforge/train.hpp"

namespace fs = std::filesystem;
using namespace dicforge;

namespace {

constexpr int kExitUsage = 64;
constexpr int kExitValidation = 65;
constexpr int kExitIo = 74;

int run_generate(const data::GenerateConfig& cfg) {
  const auto manifest = data::generate_dataset(cfg);
  std::printf("generated %llu samples (%llu train / %llu test) in %s\n",
              static_cast<unsigned long long>(manifest.sample_count),
              static_cast<unsigned long long>(manifest.train_count),
              static_cast<unsigned long long>(manifest.test_count), cfg.out_dir.c_str());
  return 0;
}

int run_train(const net::TrainConfig& cfg, uint64_t model_seed, double dropout_p) {
  net::NetworkConfig net_cfg;
  net_cfg.dropout_p = dropout_p;
  net::BayesDicNet<float> model(net_cfg, model_seed);
  net::DataView data = net::DataView::load(cfg.data_dir, /*train_split=*/true, cfg.crop);
  std::printf("training on %zu samples at %dx%d, batch %d, lr %g\n", data.count(), data.size(),
              data.size(), cfg.batch, cfg.lr);
  net::Trainer trainer(model, std::move(data), cfg);
  const auto history = trainer.run();
  if (!history.empty()) {
    std::printf("final epoch loss %.6f after %lld steps\n", history.back().mean_loss,
                static_cast<long long>(history.back().steps));
  }
  std::printf("train MAE %.4f px\n", trainer.train_mae());
  return 0;
}

int run_infer(const std::string& ckpt_path, const std::string& ref_path,
              const std::string& def_path, int mc, uint64_t seed, const fs::path& out_dir) {
  net::BayesDicNet<float> model;
  model.load_checkpoint(ckpt::read_dicm(ckpt_path));

  const Image ref = png::read_gray16(ref_path);
  const Image def = png::read_gray16(def_path);
  if (ref.height() != def.height() || ref.width() != def.width()) {
    throw validation_error("reference and deformed image sizes differ");
  }
  const int64_t H = ref.height(), W = ref.width();
  auto input = tc::Tensor<float>::zeros({1, 2, H, W});
  std::copy(ref.data(), ref.data() + ref.size(), input.values().begin());
  std::copy(def.data(), def.data() + def.size(), input.values().begin() + H * W);

  const auto result = net::mc_infer(model, input, mc, seed);

  fs::create_directories(out_dir);
  auto plane = [&](const tc::Tensor<float>& t, int c) {
    Grid<float> g{int(H), int(W)};
    std::copy(t.values().begin() + c * H * W, t.values().begin() + (c + 1) * H * W, g.data());
    return g;
  };

  bspline::DisplacementField mean;
  mean.u.values = plane(result.mean, 0);
  mean.v.values = plane(result.mean, 1);
  data::write_dfld((out_dir / "mean.dfld").string(), mean);

  eval::write_map_png((out_dir / "mean_u.png").string(), eval::field_map(mean.u.values));
  eval::write_map_png((out_dir / "mean_v.png").string(), eval::field_map(mean.v.values));
  eval::write_map_png((out_dir / "var_u.png").string(),
                      eval::variance_map(plane(result.variance, 0)));
  eval::write_map_png((out_dir / "var_v.png").string(),
                      eval::variance_map(plane(result.variance, 1)));

  nlohmann::json summary;
  summary["mc_samples"] = result.samples;
  summary["seed"] = seed;
  summary["reference"] = ref_path;
  summary["deformed"] = def_path;
  std::ofstream(out_dir / "summary.json") << summary.dump(2) << "\n";
  std::printf("wrote mean field and uncertainty maps to %s\n", out_dir.c_str());
  return 0;
}

int run_eval(const fs::path& data_dir, const std::string& ckpt_path, bool test_split, int crop,
             size_t limit, int mc, uint64_t seed, int renders, const fs::path& out_dir) {
  net::BayesDicNet<float> model;
  model.load_checkpoint(ckpt::read_dicm(ckpt_path));
  net::DataView view = net::DataView::load(data_dir, !test_split, crop, limit);

  fs::create_directories(out_dir);
  std::vector<eval::DisplacementField> preds;
  std::vector<std::pair<Grid<float>, Grid<float>>> var_maps;
  const int S = view.size();

  if (mc > 0) {
    for (size_t i = 0; i < view.count(); ++i) {
      std::vector<size_t> one{i};
      auto [input, target] = view.batch(one);
      const auto result = net::mc_infer(model, input, mc, splitmix_at(seed, i));
      eval::DisplacementField f;
      f.u.values = Grid<float>(S, S);
      f.v.values = Grid<float>(S, S);
      const int64_t plane = int64_t(S) * S;
      std::copy_n(result.mean.values().data(), plane, f.u.values.data());
      std::copy_n(result.mean.values().data() + plane, plane, f.v.values.data());
      preds.push_back(std::move(f));
      Grid<float> vu(S, S), vv(S, S);
      std::copy_n(result.variance.values().data(), plane, vu.data());
      std::copy_n(result.variance.values().data() + plane, plane, vv.data());
      var_maps.emplace_back(std::move(vu), std::move(vv));
    }
  } else {
    preds = net::predict_fields(model, view);
  }

  std::vector<eval::DisplacementField> gts;
  for (size_t i = 0; i < view.count(); ++i) {
    const net::LoadedSample& s = view.sample(i);
    eval::DisplacementField gt;
    gt.u.values = Grid<float>(S, S);
    gt.v.values = Grid<float>(S, S);
    std::copy(s.u.begin(), s.u.end(), gt.u.values.data());
    std::copy(s.v.begin(), s.v.end(), gt.v.values.data());
    gts.push_back(std::move(gt));
  }

  const eval::MetricsReport report = eval::avg_error(preds, gts);
  std::ofstream(out_dir / "metrics.json") << eval::metrics_to_json(report);

  for (int i = 0; i < renders && i < int(view.count()); ++i) {
    const std::string tag = std::to_string(i);
    eval::write_map_png((out_dir / ("err_u_" + tag + ".png")).string(),
                        eval::error_map(preds[i].u.values, gts[i].u.values));
    eval::write_map_png((out_dir / ("err_v_" + tag + ".png")).string(),
                        eval::error_map(preds[i].v.values, gts[i].v.values));
    eval::write_map_png((out_dir / ("gt_u_" + tag + ".png")).string(),
                        eval::field_map(gts[i].u.values));
    eval::write_map_png((out_dir / ("pred_u_" + tag + ".png")).string(),
                        eval::field_map(preds[i].u.values));
    if (!var_maps.empty()) {
      eval::write_map_png((out_dir / ("var_u_" + tag + ".png")).string(),
                          eval::variance_map(var_maps[size_t(i)].first));
      eval::write_map_png((out_dir / ("var_v_" + tag + ".png")).string(),
                          eval::variance_map(var_maps[size_t(i)].second));
    }
  }

  if (!var_maps.empty()) {
    std::vector<std::pair<Grid<float>, Grid<float>>> clamped, errs;
    for (size_t i = 0; i < var_maps.size(); ++i) {
      auto clamp_grid = [](const Grid<float>& g) {
        Grid<float> out(g.height(), g.width());
        for (int y = 0; y < g.height(); ++y)
          for (int x = 0; x < g.width(); ++x) out.at(y, x) = std::min(g.at(y, x), 0.02f);
        return out;
      };
      auto abs_err = [](const Grid<float>& p, const Grid<float>& g) {
        Grid<float> out(p.height(), p.width());
        for (int y = 0; y < p.height(); ++y)
          for (int x = 0; x < p.width(); ++x) out.at(y, x) = std::abs(p.at(y, x) - g.at(y, x));
        return out;
      };
      clamped.emplace_back(clamp_grid(var_maps[i].first), clamp_grid(var_maps[i].second));
      errs.emplace_back(abs_err(preds[i].u.values, gts[i].u.values),
                        abs_err(preds[i].v.values, gts[i].v.values));
    }
    const auto assoc = eval::variance_error_association(clamped, errs);
    nlohmann::json j;
    j["mean_spearman_rho"] = assoc.mean_rho;
    j["per_pair"] = assoc.per_pair;
    std::ofstream(out_dir / "association.json") << j.dump(2) << "\n";
    std::printf("variance/error mean Spearman rho %.4f\n", assoc.mean_rho);
  }

  std::printf("avg error u %.4f px (max %.4f), v %.4f px (max %.4f) over %zu pairs\n",
              report.avg_error_u, report.max_avg_error_u, report.avg_error_v,
              report.max_avg_error_v, report.pair_count);
  return 0;
}

int run_inspect(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path);
  char magic[4] = {0, 0, 0, 0};
  in.read(magic, 4);
  in.close();

  if (std::string_view(magic, 4) == "DFLD") {
    const auto hdr = data::read_dfld_header(path);
    std::printf("DFLD field: version %u, H %u, W %u, channels %u\n", hdr.version, hdr.height,
                hdr.width, hdr.channels);
    return 0;
  }
  if (std::string_view(magic, 4) == "DICM") {
    const auto s = ckpt::read_dicm_summary(path);
    std::printf("DICM checkpoint: version %u, %u parameters, adam step %llu%s\n", s.version,
                s.param_count, static_cast<unsigned long long>(s.adam_step),
                s.has_adam ? "" : " (no optimizer state)");
    for (const auto& [name, dims] : s.entries) {
      std::string shape;
      for (size_t i = 0; i < dims.size(); ++i) {
        shape += (i ? "x" : "") + std::to_string(dims[i]);
      }
      std::printf("  %-28s %s\n", name.c_str(), shape.c_str());
    }
    return 0;
  }
  // Fall back to manifest JSON.
  std::ifstream jin(path);
  std::string text((std::istreambuf_iterator<char>(jin)), std::istreambuf_iterator<char>());
  const auto manifest = data::manifest_from_json(text);
  std::printf("dataset manifest: version %d, %llu samples (%llu train / %llu test), base seed %llu\n",
              manifest.version, static_cast<unsigned long long>(manifest.sample_count),
              static_cast<unsigned long long>(manifest.train_count),
              static_cast<unsigned long long>(manifest.test_count),
              static_cast<unsigned long long>(manifest.base_seed));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dicforge: synthetic DIC datasets, displacement networks, uncertainty maps"};
  app.require_subcommand(1);

  // generate
  data::GenerateConfig gen_cfg;
  gen_cfg.workers = int(std::max(1u, std::thread::hardware_concurrency()));
  auto* gen = app.add_subcommand("generate", "Generate a labeled speckle dataset");
  gen->add_option("--out", gen_cfg.out_dir, "Output directory")->required();
  gen->add_option("--count", gen_cfg.count, "Total sample count");
  gen->add_option("--train", gen_cfg.train_count, "Training split size");
  gen->add_option("--seed", gen_cfg.base_seed, "Base seed");
  gen->add_option("--workers", gen_cfg.workers, "Worker threads");
  gen->add_flag("--overwrite", gen_cfg.overwrite, "Replace an existing output directory");

  // train
  net::TrainConfig train_cfg;
  uint64_t model_seed = 0x5EED;
  double dropout_p = 0.1;
  auto* train = app.add_subcommand("train", "Train the displacement network");
  train->add_option("--data", train_cfg.data_dir, "Dataset directory")->required();
  train->add_option("--epochs", train_cfg.epochs, "Training epochs");
  train->add_option("--batch", train_cfg.batch, "Batch size");
  train->add_option("--lr", train_cfg.lr, "Adam learning rate");
  train->add_option("--ckpt", train_cfg.ckpt_path, "Checkpoint path")->required();
  train->add_option("--seed", train_cfg.seed, "Shuffle/dropout seed");
  train->add_option("--model-seed", model_seed, "Weight init seed");
  train->add_option("--crop", train_cfg.crop, "Center-crop samples to this size");
  train->add_option("--log", train_cfg.log_path, "JSON-lines training log");
  train->add_option("--ckpt-every", train_cfg.ckpt_every, "Epochs between checkpoints");
  train->add_option("--resume", train_cfg.resume_from, "Resume from checkpoint");
  train->add_option("--dropout", dropout_p, "Dropout probability");
  train->add_flag("--verbose", train_cfg.verbose, "Per-epoch progress on stdout");

  // infer
  std::string infer_ckpt, infer_ref, infer_def;
  int infer_mc = 8;
  uint64_t infer_seed = 0;
  fs::path infer_out;
  auto* infer = app.add_subcommand("infer", "MC-dropout inference on an image pair");
  infer->add_option("--ckpt", infer_ckpt, "Checkpoint path")->required();
  infer->add_option("--ref", infer_ref, "Reference image (PNG)")->required();
  infer->add_option("--def", infer_def, "Deformed image (PNG)")->required();
  infer->add_option("--mc", infer_mc, "Stochastic forward passes");
  infer->add_option("--seed", infer_seed, "Dropout seed");
  infer->add_option("--out", infer_out, "Output directory")->required();

  // eval
  fs::path eval_data, eval_out;
  std::string eval_ckpt, eval_split = "test";
  int eval_crop = 0, eval_mc = 0, eval_renders = 4;
  size_t eval_limit = 0;
  uint64_t eval_seed = 0;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval_cmd->add_option("--data", eval_data, "Dataset directory")->required();
  eval_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint path")->required();
  eval_cmd->add_option("--split", eval_split, "train or test")
      ->check(CLI::IsMember({"train", "test"}));
  eval_cmd->add_option("--crop", eval_crop, "Center-crop samples to this size");
  eval_cmd->add_option("--limit", eval_limit, "Evaluate at most this many pairs");
  eval_cmd->add_option("--mc", eval_mc, "Use MC-dropout mean with this many passes");
  eval_cmd->add_option("--seed", eval_seed, "MC seed");
  eval_cmd->add_option("--renders", eval_renders, "Pairs to render as PNG maps");
  eval_cmd->add_option("--out", eval_out, "Output directory")->required();

  // inspect
  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "Print manifest/checkpoint/DFLD headers");
  inspect->add_option("path", inspect_path, "File to inspect")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    std::fprintf(stderr, "%s", app.help().c_str());
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return run_generate(gen_cfg);
    if (train->parsed()) return run_train(train_cfg, model_seed, dropout_p);
    if (infer->parsed()) return run_infer(infer_ckpt, infer_ref, infer_def, infer_mc, infer_seed, infer_out);
    if (eval_cmd->parsed()) {
      return run_eval(eval_data, eval_ckpt, eval_split == "test", eval_crop, eval_limit, eval_mc,
                      eval_seed, eval_renders, eval_out);
    }
    if (inspect->parsed()) return run_inspect(inspect_path);
  } catch (const validation_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const io_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  }
  return kExitUsage;
}
