#include <cmath>
#include <set>

#include "doctest.h"
#include "sergan/report.hpp"
#include "sergan/rng.hpp"

using namespace sergan;

namespace {

// three well-separated gaussian blobs in 10-d
Tensor blobs(int per_class, int n_classes, double spread, RngStream& rng,
             std::vector<int>* labels_out = nullptr) {
  Tensor x({per_class * n_classes, 10});
  for (int c = 0; c < n_classes; ++c)
    for (int i = 0; i < per_class; ++i) {
      int row = c * per_class + i;
      for (int d = 0; d < 10; ++d)
        x[static_cast<std::size_t>(row) * 10 + d] =
            (d == c ? 8.0 : 0.0) + spread * rng.normal();
      if (labels_out) labels_out->push_back(c);
    }
  return x;
}

EvaluationReport fake_report(const std::string& model, double base, int fold,
                             const std::string& source = "",
                             const std::string& target = "") {
  EvaluationReport rep;
  rep.classes = {"Angry", "Happy", "Sad"};
  rep.confusion = {{10, 0, 0}, {0, 10, 0}, {0, 0, 10}};
  rep.per_class_recall = {{"Angry", base}, {"Happy", base + 0.1}, {"Sad", base + 0.2}};
  rep.uar = base + 0.1;
  rep.metadata["model"] = model;
  rep.metadata["fold"] = std::to_string(fold);
  if (!source.empty()) {
    rep.metadata["source"] = source;
    rep.metadata["target"] = target;
  }
  return rep;
}

}  // namespace

TEST_CASE("silhouette separates blobs from noise") {
  RngStream rng(71);
  std::vector<int> labels;
  Tensor tight = blobs(12, 3, 0.3, rng, &labels);
  double good = silhouette_score(tight, labels);
  CHECK(good > 0.6);

  // same points, shuffled labels: near zero or negative
  std::vector<int> shuffled = labels;
  for (std::size_t i = 0; i + 1 < shuffled.size(); ++i)
    std::swap(shuffled[i], shuffled[i + rng.uniform_int(shuffled.size() - i)]);
  CHECK(silhouette_score(tight, shuffled) < good - 0.3);

  std::vector<int> single(labels.size(), 0);
  CHECK_THROWS_AS(silhouette_score(tight, single), std::invalid_argument);
}

TEST_CASE("tsne embeds separable blobs with clear structure") {
  RngStream rng(72);
  std::vector<int> labels;
  Tensor x = blobs(15, 3, 0.25, rng, &labels);

  TsneConfig cfg;
  cfg.iterations = 400;
  Tensor y = tsne_embed(x, cfg, 7);
  CHECK(y.shape() == std::vector<int>{45, 2});
  CHECK(silhouette_score(y, labels) > 0.4);

  // determinism
  Tensor y2 = tsne_embed(x, cfg, 7);
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == y2[i]);
  Tensor y3 = tsne_embed(x, cfg, 8);
  bool differs = false;
  for (std::size_t i = 0; i < y.numel(); ++i) differs |= y[i] != y3[i];
  CHECK(differs);
}

TEST_CASE("project_representations preserves points and labels") {
  RngStream rng(73);
  std::vector<int> int_labels;
  Tensor x = blobs(10, 2, 0.3, rng, &int_labels);
  std::vector<std::string> labels;
  std::vector<bool> augmented;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < 20; ++i) {
    labels.push_back(int_labels[i] == 0 ? "Angry" : "Happy");
    augmented.push_back(i % 2 == 0);
    ids.push_back("p" + std::to_string(i));
  }

  TsneConfig cfg;
  cfg.iterations = 250;
  auto res = project_representations(x, labels, augmented, ids, cfg, 5);
  CHECK(res.points.size() == 20);

  std::multiset<std::string> in_labels(labels.begin(), labels.end()), out_labels;
  for (const auto& p : res.points) out_labels.insert(p.label);
  CHECK(in_labels == out_labels);
  CHECK(res.points[3].id == "p3");
  CHECK(std::isfinite(res.silhouette_2d));
  CHECK(std::isfinite(res.silhouette_highdim));

  auto csv = tsne_points_csv(res);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 21);  // header + N rows
  CHECK(csv.find("augmented") != std::string::npos);

  auto svg = tsne_svg(res);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(std::count(svg.begin(), svg.end(), '\n') >= 22);

  std::vector<std::string> one_class(20, "Angry");
  CHECK_THROWS_AS(project_representations(x, one_class, augmented, ids, cfg, 5),
                  std::invalid_argument);
}

TEST_CASE("emit_report: ablation layout and fold averaging") {
  std::vector<EvaluationReport> reports;
  // two folds per model, deliberately unordered
  for (int fold = 0; fold < 2; ++fold) {
    reports.push_back(fake_report("L_Total", 0.5 + 0.1 * fold, fold));
    reports.push_back(fake_report("NoAUG", 0.3 + 0.1 * fold, fold));
    reports.push_back(fake_report("L_Model+L_VAR", 0.2 + 0.1 * fold, fold));
    reports.push_back(fake_report("L_Model", 0.4 + 0.1 * fold, fold));
  }
  auto tables = emit_report(reports, ReportLayout::Ablation);

  auto pos = [&](const std::string& s) { return tables.csv.find("\n" + s + ","); };
  CHECK(pos("NoAUG") < pos("L_Model"));
  CHECK(pos("L_Model") < pos("L_Model+L_VAR"));
  CHECK(pos("L_Model+L_VAR") < pos("L_Total"));

  // averaged UAR of NoAUG = mean(0.4, 0.5) = 0.45
  auto row_start = pos("NoAUG");
  auto row_end = tables.csv.find('\n', row_start + 1);
  std::string row = tables.csv.substr(row_start + 1, row_end - row_start - 1);
  CHECK(row.substr(row.rfind(',') + 1).find("0.45") == 0);

  CHECK(tables.markdown.find("| NoAUG |") != std::string::npos);

  CHECK_THROWS_AS(emit_report({}, ReportLayout::Ablation), std::invalid_argument);

  auto odd = fake_report("NoAUG", 0.3, 0);
  odd.per_class_recall.erase("Sad");
  reports.push_back(odd);
  CHECK_THROWS_WITH_AS(emit_report(reports, ReportLayout::Ablation),
                       doctest::Contains("inconsistent"), std::invalid_argument);
}

TEST_CASE("emit_report: cross-lingual grouping") {
  std::vector<EvaluationReport> reports;
  for (const auto& tgt : {"german", "italian"})
    for (const auto& model : {"LT", "LT_AUG", "FT", "FT_AUG"})
      reports.push_back(fake_report(model, 0.4, 0, "english", tgt));
  auto tables = emit_report(reports, ReportLayout::CrossLingual);
  CHECK(tables.csv.find("english->german,LT,") != std::string::npos);
  CHECK(tables.csv.find("english->italian,FT_AUG,") != std::string::npos);
  CHECK(tables.csv.find("pair,model") == 0);
}
