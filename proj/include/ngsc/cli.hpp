// Copyright 2026 The ngsc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Run configuration and the command implementations behind tools/ngsc.
// Every command that writes an artifact also writes "<artifact>.config.txt"
// holding the resolved configuration and the model hash.

#pragma once

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ngsc/metrics.hpp"
#include "ngsc/train.hpp"

namespace ngsc {

inline std::vector<double> parse_q_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) ++used;
    if (used == 0 || used != item.size() || !(v >= 0 && v <= 1))
      throw ConfigError("q list entries must be numbers in [0, 1], got '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty q list");
  for (size_t i = 1; i < out.size(); ++i)
    if (!(out[i] > out[i - 1])) throw ConfigError("q list must be strictly increasing");
  return out;
}

inline std::string format_q_list(const std::vector<double>& q) {
  std::ostringstream os;
  for (size_t i = 0; i < q.size(); ++i) os << (i ? "," : "") << q[i];
  return os.str();
}

inline std::string hash_hex(uint64_t h) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Model, training, data and evaluation settings in one "key = value" file.
struct RunConfig {
  CodecConfig model;
  // training
  uint64_t seed = 1;
  double desk_scale = 50;
  int64_t batch = 1;
  double lr = 1e-4;
  double clip_norm = 1.0;
  double alpha = 0.5;
  // data
  std::string data_dir;
  int64_t crop = 64;
  int64_t min_dim = 64;
  double val_fraction = 0.15;
  // evaluation
  std::vector<double> q_list{0.1, 0.3, 0.5, 0.7, 0.9};
  double w_roi = kDefaultWeightRoi;

  bool set(const std::string& key, const std::string& value) {
    auto num = [&]() {
      size_t used = 0;
      double v = 0;
      try {
        v = std::stod(value, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != value.size()) throw ConfigError("config: " + key + " expects a number, got '" + value + "'");
      return v;
    };
    auto integer = [&]() {
      const double v = num();
      if (v != std::floor(v)) throw ConfigError("config: " + key + " expects an integer, got '" + value + "'");
      return static_cast<int64_t>(v);
    };
    if (key == "seed") seed = static_cast<uint64_t>(integer());
    else if (key == "desk_scale") desk_scale = num();
    else if (key == "batch") batch = integer();
    else if (key == "lr") lr = num();
    else if (key == "clip_norm") clip_norm = num();
    else if (key == "alpha") alpha = num();
    else if (key == "data_dir") data_dir = value;
    else if (key == "crop") crop = integer();
    else if (key == "min_dim") min_dim = integer();
    else if (key == "val_fraction") val_fraction = num();
    else if (key == "q_list") q_list = parse_q_list(value);
    else if (key == "w_roi") w_roi = num();
    else return model.set(key, value);
    return true;
  }

  void validate() const {
    model.validate();
    if (!(desk_scale >= 1)) throw ConfigError("desk_scale must be >= 1");
    if (batch <= 0) throw ConfigError("batch must be positive");
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (!(alpha >= 0 && alpha < 1)) throw ConfigError("alpha must lie in [0, 1)");
    if (crop <= 0 || crop % kPadMultiple != 0) throw ConfigError("crop must be a positive multiple of 64");
    if (min_dim < crop) throw ConfigError("min_dim must be at least crop");
    if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("val_fraction must lie in [0, 1)");
    if (!(w_roi > 0 && w_roi < 1)) throw ConfigError("w_roi must lie in (0, 1)");
  }

  std::string to_text() const {
    std::ostringstream o;
    o << std::setprecision(17) << "# model\n"
      << model.to_text() << "# training\nseed = " << seed << "\ndesk_scale = " << desk_scale << "\nbatch = " << batch
      << "\nlr = " << lr << "\nclip_norm = " << clip_norm << "\nalpha = " << alpha << "\n# data\ndata_dir = " << data_dir
      << "\ncrop = " << crop << "\nmin_dim = " << min_dim << "\nval_fraction = " << val_fraction
      << "\n# evaluation\nq_list = " << format_q_list(q_list) << "\nw_roi = " << w_roi << "\n";
    return o.str();
  }

  static RunConfig parse(const std::string& text) {
    RunConfig c;
    for (const auto& [k, v] : CodecConfig::parse_key_values(text))
      if (!c.set(k, v)) throw ConfigError("config: unknown key '" + k + "'");
    c.validate();
    return c;
  }

  static RunConfig load(const std::string& path) {
    const auto bytes = read_file(path);
    return parse(std::string(bytes.begin(), bytes.end()));
  }

  TrainOptions train_options(const std::string& out_dir) const {
    TrainOptions t;
    t.phases = scaled_schedule(desk_scale);
    t.batch = batch;
    t.crop = crop;
    t.seed = seed;
    t.alpha = alpha;
    t.adam.lr = lr;
    t.adam.clip_norm = clip_norm;
    t.out_dir = out_dir;
    return t;
  }
};

inline void write_text(const std::string& path, const std::string& text) {
  write_file(path, std::vector<uint8_t>(text.begin(), text.end()));
}

/// "<artifact>.config.txt": resolved settings plus model hash.
inline void write_artifact_config(const std::string& artifact, const std::string& settings, uint64_t model_hash) {
  write_text(artifact + ".config.txt", settings + "model_hash = " + hash_hex(model_hash) + "\n");
}

inline std::string model_settings(const Model& m, const std::string& extra) {
  return "# model\n" + m.config.to_text() + "# command\n" + extra;
}

inline Tensor<float> load_mask(const std::string& path, int64_t h, int64_t w, const char* what) {
  Tensor<float> m = read_image(path, true);
  if (m.dim(2) != h || m.dim(3) != w)
    throw ShapeError(std::string(what) + " " + path + " is " + std::to_string(m.dim(3)) + "x" + std::to_string(m.dim(2)) +
                     ", image is " + std::to_string(w) + "x" + std::to_string(h));
  return m;
}

/// Writes `count` procedural h x w PNG images named synth_NNNN.png.
inline void cmd_synth(const std::string& dir, int count, int64_t h, int64_t w, uint64_t seed, std::ostream& out) {
  if (count <= 0 || h <= 0 || w <= 0) throw ConfigError("synth: count and extents must be positive");
  std::filesystem::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "synth_%04d.png", i);
    write_png((std::filesystem::path(dir) / name).string(), synthesize_image(seed * 1000003ULL + static_cast<uint64_t>(i), h, w));
  }
  out << "wrote " << count << " images to " << dir << "\n";
}

struct TrainSummary {
  std::vector<LogRow> log;
  uint64_t model_hash = 0;
  std::string model_path;
  Dataset data;
};

/// Ingests cfg.data_dir, runs the scaled three-phase schedule and writes
/// model.ngwt, train_log.csv, phase checkpoints and model.ngwt.config.txt.
inline TrainSummary cmd_train(const RunConfig& cfg, const std::string& out_dir, const std::string& resume, std::ostream& out) {
  cfg.validate();
  DatasetOptions dopt{cfg.data_dir, cfg.crop, cfg.min_dim, cfg.seed, cfg.val_fraction};
  TrainSummary s;
  s.data = ingest_dataset(dopt, [&](const std::string& w) { out << "warning: " << w << "\n"; });
  out << "dataset: " << s.data.train.size() << " train, " << s.data.val.size() << " validation, "
      << s.data.skipped_small + s.data.skipped_unreadable << " skipped\n";
  CodecNet<float> net(cfg.model, cfg.seed);
  Trainer tr(net, s.data.train, cfg.train_options(out_dir));
  if (!resume.empty()) {
    tr.load_state(resume);
    out << "resumed at step " << tr.step() << "\n";
  }
  out << "training " << tr.total_steps() << " steps (" << tr.steps_per_epoch() << " per epoch)\n";
  const int64_t every = std::max<int64_t>(1, tr.total_steps() / 20);
  s.log = tr.run(std::nullopt, [&](const LogRow& r) {
    if (r.step % every == 0) out << to_csv(r) << "\n" << std::flush;
  });
  std::filesystem::create_directories(out_dir);
  const auto bytes = Model::checkpoint_bytes(net);
  s.model_path = (std::filesystem::path(out_dir) / "model.ngwt").string();
  write_file(s.model_path, bytes);
  s.model_hash = fnv1a64(bytes);
  write_artifact_config(s.model_path, cfg.to_text(), s.model_hash);
  out << "model " << s.model_path << " hash " << hash_hex(s.model_hash) << "\n";
  return s;
}

struct EncodeArgs {
  std::string model, input, out;
  double q = 0.5;
  std::string roi, q_map, recon;
};

inline EncodeResult cmd_encode(const EncodeArgs& a, std::ostream& out) {
  Model model = Model::load(a.model);
  Tensor<float> x = read_image(a.input);
  const int64_t h = x.dim(2), w = x.dim(3);
  Tensor<float> m = a.q_map.empty() ? Tensor<float>({1, 1, h, w}, static_cast<float>(a.q)) : load_mask(a.q_map, h, w, "QIndex map");
  Tensor<float> r;
  if (!a.roi.empty()) r = load_mask(a.roi, h, w, "ROI mask");
  if (a.q_map.empty() && !(a.q >= 0 && a.q <= 1)) throw ConfigError("--q must lie in [0, 1]");
  EncodeResult enc = encode_image(model, x, m, a.roi.empty() ? nullptr : &r);
  write_file(a.out, write_bitstream(enc.stream));
  std::ostringstream extra;
  extra << std::setprecision(17) << "input = " << a.input << "\nq = " << (a.q_map.empty() ? std::to_string(a.q) : "map")
        << "\nq_map = " << a.q_map << "\nroi = " << a.roi << "\n";
  write_artifact_config(a.out, model_settings(model, extra.str()), model.hash);
  if (!a.recon.empty()) write_image(a.recon, enc.x_hat);
  out << std::fixed << std::setprecision(4) << a.out << ": " << enc.stream.byte_size() << " bytes, "
      << bpp(enc.stream) << " bpp, PSNR " << psnr(x, enc.x_hat) << " dB\n";
  return enc;
}

inline DecodeResult cmd_decode(const std::string& model_path, const std::string& stream_path, const std::string& out_path,
                               std::ostream& out) {
  Model model = Model::load(model_path);
  Bitstream s = parse_bitstream(read_file(stream_path));
  DecodeResult d = decode_image(model, s);
  write_image(out_path, d.x_hat);
  write_artifact_config(out_path, model_settings(model, "stream = " + stream_path + "\n"), model.hash);
  out << out_path << ": " << s.width << "x" << s.height << "\n";
  return d;
}

struct EvalPair {
  std::string reference, reconstruction, stream;  // stream optional, for bpp
};

struct EvalRow {
  double psnr = 0, psnr_roi = 0, psnr_nroi = 0, bpp = -1;
};

/// PSNR (and with an ROI mask, region PSNRs) of each pair; bpp when the
/// stream is given.
inline std::vector<EvalRow> cmd_eval(const std::vector<EvalPair>& pairs, const std::string& roi, double w_roi,
                                     std::ostream& out) {
  if (pairs.empty()) throw ConfigError("eval: no image pairs");
  std::vector<EvalRow> rows;
  out << "reference,reconstruction,psnr,psnr_roi,psnr_nroi,bpp\n" << std::fixed << std::setprecision(4);
  for (const auto& p : pairs) {
    Tensor<float> x = read_image(p.reference), y = read_image(p.reconstruction);
    if (x.shape() != y.shape()) throw ShapeError("eval: " + p.reference + " and " + p.reconstruction + " differ in size");
    EvalRow r;
    if (!roi.empty()) {
      auto w = weighted_psnr(x, y, load_mask(roi, x.dim(2), x.dim(3), "ROI mask"), w_roi);
      r.psnr = w.full, r.psnr_roi = w.roi, r.psnr_nroi = w.nroi;
    } else {
      r.psnr = r.psnr_roi = r.psnr_nroi = psnr(x, y);
    }
    if (!p.stream.empty()) r.bpp = bpp(parse_bitstream(read_file(p.stream)));
    out << p.reference << ',' << p.reconstruction << ',' << r.psnr << ',' << r.psnr_roi << ',' << r.psnr_nroi << ',';
    if (r.bpp >= 0)
      out << r.bpp;
    out << "\n";
    rows.push_back(r);
  }
  return rows;
}

/// Loads every readable image in `dir` (sorted by name).
inline std::vector<Tensor<float>> load_image_dir(const std::string& dir, std::ostream& out) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ConfigError("image directory not found: " + dir);
  std::vector<std::string> paths;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) paths.push_back(e.path().string());
  std::sort(paths.begin(), paths.end());
  std::vector<Tensor<float>> images;
  for (const auto& p : paths) {
    try {
      images.push_back(read_image(p));
    } catch (const std::exception& ex) {
      out << "warning: skipping " << p << ": " << ex.what() << "\n";
    }
  }
  if (images.empty()) throw ConfigError("no readable images in " + dir);
  return images;
}

/// RD sweep over a directory; writes CSV, gnuplot data and config.
inline RDCurve cmd_sweep(const std::string& model_path, const std::string& dir, const std::vector<double>& q_list,
                         const std::string& out_csv, std::ostream& out) {
  Model model = Model::load(model_path);
  auto images = load_image_dir(dir, out);
  RDCurve c = sweep_rd(model, images, q_list, nullptr, kDefaultWeightRoi, std::filesystem::path(model_path).stem().string());
  write_text(out_csv, rd_csv(c));
  write_text(out_csv + ".dat", rd_gnuplot(c));
  write_artifact_config(out_csv, model_settings(model, "images = " + dir + "\nq_list = " + format_q_list(q_list) + "\n"), model.hash);
  for (const auto& w : curve_warnings(c)) out << "warning: " << w << "\n";
  out << rd_csv(c);
  return c;
}

inline double cmd_bdrate(const std::string& anchor_csv, const std::string& test_csv, const std::string& out_path,
                         std::ostream& out) {
  auto load = [](const std::string& p) {
    const auto b = read_file(p);
    return parse_rd_csv(std::string(b.begin(), b.end()), p);
  };
  const RDCurve a = load(anchor_csv), t = load(test_csv);
  const std::string report = bd_rate_report(a, t);
  if (!out_path.empty()) write_text(out_path, report);
  out << report;
  return bd_rate(a, t);
}

/// Bit-allocation map of the coded latent: PGM image plus raw CSV.
inline BitAllocationMap cmd_bitmap(const std::string& model_path, const std::string& input, double q,
                                   const std::string& out_pgm, std::ostream& out) {
  Model model = Model::load(model_path);
  Tensor<float> x = read_image(input);
  auto enc = encode_image(model, x, Tensor<float>({1, 1, x.dim(2), x.dim(3)}, static_cast<float>(q)));
  BitAllocationMap m = bit_allocation_map(enc.likelihood_y);
  write_pnm(out_pgm, m.image);
  write_text(out_pgm + ".csv", bit_map_csv(m));
  std::ostringstream extra;
  extra << "input = " << input << "\nq = " << q << "\nchannel = " << m.channel << "\n";
  write_artifact_config(out_pgm, model_settings(model, extra.str()), model.hash);
  double total = 0;
  for (double b : m.bits) total += b;
  out << "channel " << m.channel << ": " << std::fixed << std::setprecision(2) << total << " bits over " << m.height << "x"
      << m.width << " latent positions\n";
  return m;
}

}  // namespace ngsc
