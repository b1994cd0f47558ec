/* Copyright 2026 The cprlite Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "cpr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "json.hpp"

namespace cpr::tools {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(Supervision s) { return s == Supervision::kCoarse ? "coarse" : "refined"; }

namespace {

void require(const fs::path& path, const std::string& stage, const std::string& producer) {
  if (!fs::exists(path))
    throw MissingArtifact("stage '" + stage + "' needs " + path.string() + "; run '" + producer +
                          "' first");
}

std::string rel(const Layout& layout, const fs::path& p) {
  return p.lexically_relative(layout.root).generic_string();
}

std::string format(const char* fmt, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, fmt, a);
  return buf;
}

std::string row(const std::string& label, const std::string& value) {
  std::string out = "  " + label;
  if (out.size() < 34) out.resize(34, ' ');
  return out + value;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void finish(const Layout& layout, StageSummary& s) {
  json metrics = json::object();
  for (const auto& [k, v] : s.metrics) metrics[k] = v;
  write_json(layout.summary(s.stage), {{"stage", s.stage},
                                       {"metrics", metrics},
                                       {"outputs", s.outputs},
                                       {"failed_records", s.failed_records}});
  s.outputs.push_back(rel(layout, layout.summary(s.stage)));
}

void add(StageSummary& s, const std::string& key, double value, const char* fmt = "%.6g") {
  s.metrics.emplace_back(key, value);
  s.table.push_back(row(key, format(fmt, value)));
}

double rsv_or_nan(const Dataset& d, const PointsByImage& p) {
  return rsv(pair_with_objects(d, p)).value_or(std::nan(""));
}


}  // namespace

double mean_oracle_distance(const PointsByImage& points, const OracleCenters& centers) {
  double sum = 0.0;
  int n = 0;
  for (const auto& [image_id, list] : points) {
    auto it = centers.find(image_id);
    if (it == centers.end()) continue;
    for (const auto& p : list)
      for (const auto& c : it->second)
        if (c.object_id == p.object_id) {
          sum += distance(p.position, c.centroid);
          ++n;
        }
  }
  return n == 0 ? std::nan("") : sum / n;
}

StageSummary cmd_synth(const RunConfig& config) {
  const Layout layout{config.workspace};
  StageSummary s;
  s.stage = "synth";
  const Fixture train = generate_fixture(config.scene, config.train_images, 0);
  const Fixture eval = generate_fixture(config.scene, config.eval_images, config.train_images);
  fs::create_directories(layout.root / "data");
  save_dataset(layout.train_dataset(), train.dataset);
  save_dataset(layout.eval_dataset(), eval.dataset);
  save_oracle_centers(layout.train_oracle(), train.centers);
  save_oracle_centers(layout.eval_oracle(), eval.centers);
  auto objects = [](const Dataset& d) {
    std::size_t n = 0;
    for (const auto& i : d.images) n += i.objects.size();
    return static_cast<double>(n);
  };
  add(s, "train_images", static_cast<double>(train.dataset.images.size()), "%.0f");
  add(s, "eval_images", static_cast<double>(eval.dataset.images.size()), "%.0f");
  add(s, "train_objects", objects(train.dataset), "%.0f");
  add(s, "eval_objects", objects(eval.dataset), "%.0f");
  add(s, "placement_shortfalls", train.shortfalls + eval.shortfalls, "%.0f");
  for (const auto& p : {layout.train_dataset(), layout.eval_dataset(), layout.train_oracle(), layout.eval_oracle()})
    s.outputs.push_back(rel(layout, p));
  finish(layout, s);
  return s;
}

StageSummary cmd_annotate(const RunConfig& config) {
  const Layout layout{config.workspace};
  require(layout.train_dataset(), "annotate", "synth");
  StageSummary s;
  s.stage = "annotate";
  const Dataset train = load_dataset(layout.train_dataset());
  const PointsByImage points = sample_dataset_points(train, config.sigma, config.annotate_seed);
  const PointFile file = make_point_file(points, config.sigma, config.annotate_seed);
  save_points(layout.coarse_points(), file);
  int fallbacks = 0;
  for (const auto& r : file.points) fallbacks += r.fallback ? 1 : 0;
  add(s, "sigma", config.sigma);
  add(s, "points", static_cast<double>(file.points.size()), "%.0f");
  add(s, "fallbacks", fallbacks, "%.0f");
  add(s, "rsv_coarse", rsv_or_nan(train, points));
  s.outputs.push_back(rel(layout, layout.coarse_points()));
  finish(layout, s);
  return s;
}

StageSummary cmd_train(const RunConfig& config) {
  const Layout layout{config.workspace};
  require(layout.train_dataset(), "train", "synth");
  require(layout.coarse_points(), "train", "annotate");
  StageSummary s;
  s.stage = "train";
  const Dataset train = load_dataset(layout.train_dataset());
  const PointsByImage points = group_points(load_points(layout.coarse_points()));
  const TrainResult result = train_cprnet(train, points, config.cpr_train, config.cpr_extractor);
  save_checkpoint(layout.cpr_model(), result.model, config.cpr_train);
  write_loss_trace(layout.cpr_loss(), result.trace);
  add(s, "epochs", static_cast<double>(result.trace.size()), "%.0f");
  if (!result.trace.empty()) {
    add(s, "initial_l_total", result.trace.front().l_total);
    add(s, "final_l_total", result.trace.back().l_total);
    add(s, "final_l_mil", result.trace.back().l_mil);
    add(s, "final_l_ann", result.trace.back().l_ann);
    add(s, "final_l_neg", result.trace.back().l_neg);
  }
  s.outputs.push_back(rel(layout, layout.cpr_model()));
  s.outputs.push_back(rel(layout, layout.cpr_loss()));
  finish(layout, s);
  return s;
}

StageSummary cmd_refine(const RunConfig& config) {
  const Layout layout{config.workspace};
  require(layout.train_dataset(), "refine", "synth");
  require(layout.coarse_points(), "refine", "annotate");
  require(layout.cpr_model(), "refine", "train");
  StageSummary s;
  s.stage = "refine";
  const Dataset train = load_dataset(layout.train_dataset());
  const PointFile coarse_file = load_points(layout.coarse_points());
  const PointsByImage coarse = group_points(coarse_file);
  const CprModel model = load_checkpoint(layout.cpr_model());
  const RefineResult result = refine_dataset(model, train, coarse, config.refine);
  save_points(layout.refined_points(), to_point_file(result, coarse_file.sigma, coarse_file.seed));

  json support = json::array();
  double support_sum = 0.0, displacement_sum = 0.0;
  std::size_t n = 0;
  for (const auto& [image_id, list] : result.points) {
    for (const auto& p : list) {
      json sp = json::array();
      for (const auto& q : p.support) sp.push_back({q.position.x, q.position.y, q.weight});
      support.push_back({{"image_id", image_id},
                         {"object_id", p.object_id},
                         {"category", p.category},
                         {"annotated", {p.annotated.x, p.annotated.y}},
                         {"refined", {p.position.x, p.position.y}},
                         {"support", sp}});
      support_sum += static_cast<double>(p.support.size());
      displacement_sum += p.displacement();
      ++n;
    }
  }
  write_json(layout.refine_support(), {{"points", support}});
  s.outputs.push_back(rel(layout, layout.refined_points()));
  s.outputs.push_back(rel(layout, layout.refine_support()));
  if (!result.errors.empty()) {
    json errors = json::array();
    for (const auto& e : result.errors)
      errors.push_back({{"image_id", e.image_id}, {"object_id", e.object_id}, {"message", e.message}});
    write_json(layout.refine_errors(), errors);
    s.outputs.push_back(rel(layout, layout.refine_errors()));
    s.failed_records = static_cast<int>(result.errors.size());
  } else if (fs::exists(layout.refine_errors())) {
    fs::remove(layout.refine_errors());
  }
  const PointsByImage refined = to_coarse_points(result);
  add(s, "points", static_cast<double>(n), "%.0f");
  add(s, "errors", static_cast<double>(result.errors.size()), "%.0f");
  add(s, "mean_support_size", n ? support_sum / n : 0.0);
  add(s, "mean_displacement_px", n ? displacement_sum / n : 0.0);
  add(s, "rsv_coarse", rsv_or_nan(train, coarse));
  add(s, "rsv_refined", rsv_or_nan(train, refined));
  if (fs::exists(layout.train_oracle())) {
    const OracleCenters centers = load_oracle_centers(layout.train_oracle());
    add(s, "oracle_distance_coarse_px", mean_oracle_distance(coarse, centers));
    add(s, "oracle_distance_refined_px", mean_oracle_distance(refined, centers));
  }
  finish(layout, s);
  return s;
}

StageSummary cmd_localize(const RunConfig& config, const std::vector<Supervision>& supervision) {
  const Layout layout{config.workspace};
  require(layout.train_dataset(), "localize", "synth");
  require(layout.eval_dataset(), "localize", "synth");
  for (auto sup : supervision)
    require(sup == Supervision::kCoarse ? layout.coarse_points() : layout.refined_points(), "localize",
            sup == Supervision::kCoarse ? "annotate" : "refine");
  StageSummary s;
  s.stage = "localize";
  const Dataset train = load_dataset(layout.train_dataset());
  const Dataset eval = load_dataset(layout.eval_dataset());
  for (auto sup : supervision) {
    const std::string name = to_string(sup);
    const PointsByImage points = group_points(
        load_points(sup == Supervision::kCoarse ? layout.coarse_points() : layout.refined_points()));
    const LocalizerTrainResult result = train_localizer(train, points, config.localizer);
    save_localizer(layout.localizer_model(name), result.model, config.localizer);
    const PredictionsByImage preds = predict_dataset(result.model, eval, config.localizer);
    save_predictions(layout.predictions(name), preds);
    if (!result.loss_trace.empty()) add(s, name + ".final_loss", result.loss_trace.back());
    add(s, name + ".predictions", static_cast<double>([&] {
          std::size_t k = 0;
          for (const auto& [id, list] : preds) k += list.size();
          return k;
        }()),
        "%.0f");
    s.outputs.push_back(rel(layout, layout.localizer_model(name)));
    s.outputs.push_back(rel(layout, layout.predictions(name)));
  }
  finish(layout, s);
  return s;
}

StageSummary cmd_eval(const RunConfig& config) {
  const Layout layout{config.workspace};
  require(layout.eval_dataset(), "eval", "synth");
  std::vector<Supervision> present;
  for (auto sup : {Supervision::kCoarse, Supervision::kRefined})
    if (fs::exists(layout.predictions(to_string(sup)))) present.push_back(sup);
  if (present.empty())
    throw MissingArtifact("stage 'eval' needs localizer predictions under " +
                          (layout.root / "localizer").string() + "; run 'localize' first");
  StageSummary s;
  s.stage = "eval";
  const Dataset eval = load_dataset(layout.eval_dataset());

  std::string header = row("tau", "");
  for (auto sup : present) {
    std::string col = to_string(sup);
    col.resize(12, ' ');
    header += col;
  }
  s.table.push_back(header);
  std::vector<EvalReport> reports;
  for (auto sup : present) {
    const std::string name = to_string(sup);
    const EvalReport report = evaluate_predictions(eval, load_predictions(layout.predictions(name)), config.taus);
    write_eval_report(layout.eval_report(name), report);
    s.outputs.push_back(rel(layout, layout.eval_report(name)));
    for (const auto& t : report.taus) {
      const fs::path curves = layout.root / "eval" / name / ("pr_tau_" + format("%g", t.tau) + ".csv");
      write_pr_curves(curves, t);
      s.outputs.push_back(rel(layout, curves));
      s.metrics.emplace_back(name + ".mAP@" + format("%g", t.tau), t.map);
    }
    reports.push_back(report);
  }
  for (std::size_t i = 0; i < config.taus.size(); ++i) {
    std::string line = row("mAP@" + format("%g", config.taus[i]), "");
    for (const auto& r : reports) {
      std::string col = format("%.4f", r.taus[i].map);
      col.resize(12, ' ');
      line += col;
    }
    s.table.push_back(line);
  }

  if (fs::exists(layout.train_dataset())) {
    const Dataset train = load_dataset(layout.train_dataset());
    const bool oracle = fs::exists(layout.train_oracle());
    const OracleCenters centers = oracle ? load_oracle_centers(layout.train_oracle()) : OracleCenters{};
    for (auto [name, path] : {std::pair{std::string("coarse"), layout.coarse_points()},
                              std::pair{std::string("refined"), layout.refined_points()}}) {
      if (!fs::exists(path)) continue;
      const PointsByImage points = group_points(load_points(path));
      add(s, "rsv_" + name, rsv_or_nan(train, points));
      if (oracle) add(s, "oracle_distance_" + name + "_px", mean_oracle_distance(points, centers));
    }
  }
  finish(layout, s);
  return s;
}

namespace {

void paint(Image& img, int col, int row, const std::array<double, 3>& color, int half) {
  for (int dy = -half; dy <= half; ++dy)
    for (int dx = -half; dx <= half; ++dx) {
      const int r = row + dy, c = col + dx;
      if (r >= 0 && c >= 0 && r < img.height() && c < img.width()) img.set_rgb(r, c, color);
    }
}

int pixel(double v, int limit) {
  return std::clamp(static_cast<int>(std::floor(v)), 0, limit - 1);
}

void write_heatmap(const fs::path& path, const Heatmap& h, int scale) {
  const int side = h.bins * scale;
  std::vector<double> values(static_cast<std::size_t>(side) * side);
  double peak = 0.0;
  for (double v : h.grid) peak = std::max(peak, v);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) values[static_cast<std::size_t>(r) * side + c] = h.at(r / scale, c / scale);
  write_pgm(path, side, side, values, peak > 0.0 ? peak : 1.0);
}

}  // namespace

StageSummary cmd_render(const RunConfig& config) {
  const Layout layout{config.workspace};
  require(layout.train_dataset(), "render", "synth");
  require(layout.refined_points(), "render", "refine");
  StageSummary s;
  s.stage = "render";
  const Dataset train = load_dataset(layout.train_dataset());
  const PointsByImage refined = group_points(load_points(layout.refined_points()));
  const PointsByImage coarse =
      fs::exists(layout.coarse_points()) ? group_points(load_points(layout.coarse_points())) : PointsByImage{};

  std::map<int, std::vector<Point2>> support;
  if (fs::exists(layout.refine_support())) {
    std::ifstream in(layout.refine_support());
    const json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.contains("points"))
      throw LoadError("malformed support file " + layout.refine_support().string());
    for (const auto& p : j.at("points"))
      for (const auto& q : p.at("support"))
        support[p.at("image_id").get<int>()].push_back({q.at(0).get<double>(), q.at(1).get<double>()});
  }

  const fs::path overlays = layout.render_dir() / "overlays";
  fs::create_directories(overlays);
  int marked = 0;
  for (const auto& image : train.images) {
    Image canvas = quantize_8bit(image.pixels);
    const int w = canvas.width(), h = canvas.height();
    if (auto it = support.find(image.image_id); it != support.end())
      for (const auto& p : it->second) paint(canvas, pixel(p.x, w), pixel(p.y, h), kSupportColor, 0);
    if (auto it = coarse.find(image.image_id); it != coarse.end() && refined.count(image.image_id))
      for (const auto& p : it->second) paint(canvas, pixel(p.position.x, w), pixel(p.position.y, h), kAnnotatedColor, 1);
    if (auto it = refined.find(image.image_id); it != refined.end())
      for (const auto& p : it->second) {
        paint(canvas, pixel(p.position.x, w), pixel(p.position.y, h), kRefinedColor, 1);
        ++marked;
      }
    const fs::path out = overlays / (std::to_string(image.image_id) + ".ppm");
    write_ppm(out, canvas);
    s.outputs.push_back(rel(layout, out));
  }

  for (auto [name, points] : {std::pair{std::string("coarse"), &coarse}, std::pair{std::string("refined"), &refined}}) {
    const Heatmap hm = position_heatmap(pair_with_objects(train, *points), config.heatmap_bins);
    const fs::path out = layout.render_dir() / ("heatmap_" + name + ".pgm");
    write_heatmap(out, hm, 8);
    s.outputs.push_back(rel(layout, out));
    add(s, "heatmap_" + name + "_points", hm.used, "%.0f");
  }
  add(s, "overlays", static_cast<double>(train.images.size()), "%.0f");
  add(s, "refined_markers", marked, "%.0f");
  finish(layout, s);
  return s;
}

std::vector<StageSummary> run_pipeline(const RunConfig& config) {
  std::vector<StageSummary> out;
  out.push_back(cmd_synth(config));
  out.push_back(cmd_annotate(config));
  out.push_back(cmd_train(config));
  out.push_back(cmd_refine(config));
  out.push_back(cmd_localize(config, {Supervision::kCoarse, Supervision::kRefined}));
  out.push_back(cmd_eval(config));
  out.push_back(cmd_render(config));
  return out;
}

void print_summary(std::ostream& out, const StageSummary& summary) {
  out << "[" << summary.stage << "]\n";
  for (const auto& line : summary.table) out << line << '\n';
  if (summary.failed_records > 0) out << "  failed records: " << summary.failed_records << '\n';
}

}  // namespace cpr::tools
