// Copyright (c) 2026 The Bokeh Authors.
// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bokeh/bokeh.hpp"

namespace fs = std::filesystem;
using namespace bokeh;

namespace {

struct Extent {
  std::size_t h = 0, w = 0;
};

Extent parse_extent(const std::string& s) {
  const auto x = s.find_first_of("xX");
  if (x == std::string::npos) throw CLI::ValidationError("size", "expected HxW, got '" + s + "'");
  try {
    std::size_t used = 0;
    Extent e{std::stoul(s.substr(0, x), &used), 0};
    if (used != x) throw std::invalid_argument(s);
    const std::string rest = s.substr(x + 1);
    e.w = std::stoul(rest, &used);
    if (used != rest.size() || e.h == 0 || e.w == 0) throw std::invalid_argument(s);
    return e;
  } catch (const std::logic_error&) {
    throw CLI::ValidationError("size", "expected HxW, got '" + s + "'");
  }
}

// Edge-pads a 3 x H x W image up to multiples of `factor`.
Tensor<float> pad_to_multiple(const Tensor<float>& img, std::size_t factor) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  const std::size_t ph = (h + factor - 1) / factor * factor, pw = (w + factor - 1) / factor * factor;
  if (ph == h && pw == w) return img;
  Tensor<float> out({3, ph, pw});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < ph; ++y)
      for (std::size_t x = 0; x < pw; ++x)
        out.raw()[(c * ph + y) * pw + x] = img.raw()[(c * h + std::min(y, h - 1)) * w + std::min(x, w - 1)];
  return out;
}

Tensor<float> crop(const Tensor<float>& img, std::size_t h, std::size_t w) {
  const std::size_t ih = img.dim(img.rank() - 2), iw = img.dim(img.rank() - 1);
  Tensor<float> out({3, h, w});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.raw()[(c * h + y) * w + x] = img.raw()[(c * ih + y) * iw + x];
  return out;
}

std::string mode_suffix(const std::string& s) {
  std::string out;
  for (char c : s) out += c == '.' ? 'p' : c;
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bokeh: aperture-conditioned depth-of-field rendering"};
  app.require_subcommand(1);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "Render a synthetic paired dataset");
  std::size_t n_scenes = 16;
  std::string size = "64x64";
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  int n_layers = 3, n_lights = 6;
  double max_radius = 8.0;
  std::vector<double> synth_f;
  synth->add_option("--scenes", n_scenes, "Number of scenes")->check(CLI::PositiveNumber);
  synth->add_option("--size", size, "Image size HxW");
  synth->add_option("--seed", synth_seed, "Seed of the first scene");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--layers", n_layers, "Depth layers per scene")->check(CLI::Range(2, 16));
  synth->add_option("--lights", n_lights, "Point lights per scene")->check(CLI::NonNegativeNumber);
  synth->add_option("--max-radius", max_radius, "Blur radius of the farthest layer at f/2");
  synth->add_option("--f-targets", synth_f, "Fixed target f-numbers (default: capture protocol)")->delimiter(',');

  // train
  auto* train = app.add_subcommand("train", "Train a model on a dataset directory");
  std::string data_dir, preset = "tiny", mask_mode = "f-aware", ckpt_out, resume, log_path;
  TrainConfig tc;
  train->add_option("--data", data_dir, "Dataset directory")->required();
  train->add_option("--preset", preset, "Model preset")->check(CLI::IsMember({"tiny", "m", "l", "M", "L"}));
  train->add_option("--steps", tc.steps, "Total optimiser steps");
  train->add_option("--batch", tc.batch_size, "Batch size")->check(CLI::PositiveNumber);
  train->add_option("--patch", tc.patch, "Square crop size")->check(CLI::PositiveNumber);
  train->add_option("--lr", tc.lr, "Adam learning rate");
  train->add_option("--loss-weight", tc.loss_weight, "Perceptual loss weight");
  train->add_option("--mask-mode", mask_mode, "Attention mask mode")
      ->check(CLI::IsMember({"maskless", "single", "multi", "f-aware"}));
  train->add_option("--seed", tc.seed, "Seed for initialisation and batches");
  train->add_option("--out", ckpt_out, "Checkpoint path")->required();
  train->add_option("--clip-norm", tc.clip_norm, "Global gradient norm clip (0 disables)");
  train->add_option("--checkpoint-every", tc.checkpoint_every, "Save every N steps");
  train->add_option("--resume", resume, "Resume from this checkpoint");
  train->add_option("--log", log_path, "Per-step CSV log");
  bool invert = false;
  train->add_flag("--invert", invert, "Train the deblurring direction");

  // infer
  auto* infer = app.add_subcommand("infer", "Render an image at a target f-number");
  std::string infer_ckpt, infer_in, infer_out;
  double infer_f = 2.0;
  bool sixteen = false;
  infer->add_option("--ckpt", infer_ckpt, "Checkpoint")->required();
  infer->add_option("--input", infer_in, "Input image (PNG/PPM/PGM)")->required()->check(CLI::ExistingFile);
  infer->add_option("--f-number", infer_f, "Target f-number")->required();
  infer->add_option("--out", infer_out, "Output image")->required();
  infer->add_flag("--16bit", sixteen, "Write 16 bits per sample");

  // eval
  auto* eval = app.add_subcommand("eval", "Per-aperture metrics of a checkpoint");
  std::string eval_ckpt, eval_data, eval_out;
  std::vector<double> f_list{2.0, 2.8, 4.0, 8.0};
  bool baseline = false;
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint")->required();
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("--f-list", f_list, "Comma-separated f-numbers")->delimiter(',');
  eval->add_option("--out", eval_out, "Output CSV")->required();
  eval->add_flag("--input-baseline", baseline, "Score the unprocessed input instead");

  // dump-masks
  auto* dump = app.add_subcommand("dump-masks", "Write decay masks as 8-bit PGM images");
  std::string grid = "8x8", dump_out, dump_mode = "f-aware";
  std::size_t heads = 4;
  double a = 2.0, b = 6.0;
  std::vector<double> dump_f{1.0};
  dump->add_option("--grid", grid, "Token grid HxW");
  dump->add_option("--heads", heads, "Number of heads")->check(CLI::PositiveNumber);
  dump->add_option("--a", a, "Smallest mask exponent");
  dump->add_option("--b", b, "Largest mask exponent");
  dump->add_option("--f", dump_f, "Encoded aperture values in (0, 1]")->delimiter(',');
  dump->add_option("--mode", dump_mode, "Mask mode")->check(CLI::IsMember({"maskless", "single", "multi", "f-aware"}));
  dump->add_option("--out", dump_out, "Output directory")->required();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite in double precision");
  std::string gc_preset = "tiny";
  std::uint64_t gc_seed = 7;
  gc->add_option("--preset", gc_preset, "Model preset of the full-model check")->check(CLI::IsMember({"tiny"}));
  gc->add_option("--seed", gc_seed, "Seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const Extent e = parse_extent(size);
      PairOptions opt;
      opt.height = e.h;
      opt.width = e.w;
      opt.n_layers = n_layers;
      opt.n_point_lights = n_lights;
      opt.render.max_radius = max_radius;
      const auto policy = synth_f.empty() ? FTargetPolicy::protocol_policy() : FTargetPolicy::fixed_list(synth_f);
      const auto rows = write_dataset(synth_out, consecutive_seeds(synth_seed, n_scenes), policy, opt);
      std::cout << "wrote " << rows.size() << " pairs from " << n_scenes << " scenes to " << synth_out << '\n';
      return 0;
    }

    if (*train) {
      auto data = load_dataset(data_dir, invert);
      ModelConfig cfg = ModelConfig::preset(preset);
      cfg.mask_mode = parse_mask_mode(mask_mode);
      Model<float> model = Model<float>::build(cfg, derive_seed(tc.seed, 1));
      tc.checkpoint_path = ckpt_out;
      Trainer<float> trainer(model, std::move(data), tc);
      if (!resume.empty()) {
        trainer.restore(load_checkpoint(resume));
        std::cout << "resumed at step " << trainer.global_step() << '\n';
      }
      std::ofstream log;
      const bool append = !resume.empty() && fs::exists(log_path);
      if (!log_path.empty()) {
        log.open(log_path, append ? std::ios::app : std::ios::trunc);
        if (!log) throw std::runtime_error("cannot open log '" + log_path + "'");
        if (!append) log << kTrainCsvHeader << '\n';
      }
      const auto t0 = std::chrono::steady_clock::now();
      trainer.run(log_path.empty() ? nullptr : &log, [&](const StepRecord& r) {
        if (r.step == 1 || r.step % 50 == 0 || r.step == tc.steps) {
          const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          std::printf("step %6llu  loss %.5f  l1 %.5f  perc %.5f  |g| %.4f  %.1fs\n",
                      static_cast<unsigned long long>(r.step), r.loss, r.l1, r.perceptual, r.grad_norm, s);
          std::fflush(stdout);
        }
      });
      save_checkpoint(ckpt_out, trainer.checkpoint());
      std::cout << "saved " << ckpt_out << " (" << model.parameter_count() << " parameters)\n";
      return 0;
    }

    if (*infer) {
      const Model<float> model = model_from_checkpoint<float>(load_checkpoint(infer_ckpt));
      const Tensor<float> img = read_image(infer_in);
      if (img.dim(0) != 3) throw std::runtime_error("infer: expected an RGB image");
      const Tensor<float> padded = pad_to_multiple(img, model.config().downsample_factor());
      const Tensor<float> out = crop(model.infer(padded, infer_f), img.dim(1), img.dim(2));
      write_image(infer_out, out, sixteen ? BitDepth::k16 : BitDepth::k8);
      return 0;
    }

    if (*eval) {
      const Model<float> model = model_from_checkpoint<float>(load_checkpoint(eval_ckpt));
      const auto data = load_dataset(eval_data);
      EvalOptions opt;
      opt.input_baseline = baseline;
      const auto rows = evaluate(model, data, f_list, opt);
      if (fs::path(eval_out).has_parent_path()) fs::create_directories(fs::path(eval_out).parent_path());
      std::ofstream out(eval_out);
      if (!out) throw std::runtime_error("cannot create '" + eval_out + "'");
      write_metric_rows(out, rows);
      for (const auto& r : rows)
        if (r.sample_id == "mean")
          std::printf("f/%-4s  psnr %.3f  ssim %.4f  l1 %.5f\n", r.f_number.c_str(), r.psnr, r.ssim, r.l1);
      return 0;
    }

    if (*dump) {
      const Extent e = parse_extent(grid);
      const DecaySchedule s{a, b, heads, parse_mask_mode(dump_mode)};
      fs::create_directories(dump_out);
      for (double f : dump_f) {
        const auto set = build_masks<double>(e.h, e.w, decay_rates(s, f));
        const std::size_t t = set.tokens();
        char fname[64];
        for (std::size_t h = 0; h < heads; ++h) {
          Tensor<float> img({1, t, t});
          for (std::size_t i = 0; i < t * t; ++i) img[i] = static_cast<float>(set.masks[h * t * t + i]);
          std::snprintf(fname, sizeof fname, "mask_f%s_head%zu.pgm", mode_suffix(f_label(f)).c_str(), h);
          write_image(fs::path(dump_out) / fname, img, BitDepth::k8);
        }
      }
      std::cout << "wrote " << dump_f.size() * heads << " masks to " << dump_out << '\n';
      return 0;
    }

    if (*gc) {
      const auto results = gradcheck_suite(gc_seed, &std::cout);
      const bool ok = all_passed(results);
      std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << " (" << results.size() << " checks)\n";
      return ok ? 0 : 1;
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}
