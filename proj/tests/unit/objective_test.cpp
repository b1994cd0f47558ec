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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "cpr/error.hpp"
#include "cpr/objective.hpp"
#include "cpr/rng.hpp"

namespace cpr {
namespace {

RowMatrix random_rows(int n, int d, Rng& rng, double scale = 1.0) {
  RowMatrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

Heads random_heads(int K, int d, Rng& rng) {
  Heads h{LinearHead(K, d), LinearHead(K, d)};
  for (auto* head : {&h.cls, &h.ins}) {
    for (Eigen::Index i = 0; i < head->weight.size(); ++i) head->weight.data()[i] = rng.uniform(-1, 1);
    for (Eigen::Index i = 0; i < head->bias.size(); ++i) head->bias(i) = rng.uniform(-1, 1);
  }
  return h;
}

Eigen::VectorXd onehot(int K, int category) {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(K);
  c(category - 1) = 1;
  return c;
}

double bce(double s, double c) { return -(c * std::log(s) + (1 - c) * std::log(1 - s)); }

TEST(FocalTerm, PerfectPredictionIsNearZero) {
  Eigen::VectorXd c = onehot(4, 2);
  EXPECT_NEAR(focal_term(c, c, 2.0), 0.0, 1e-5);
}

TEST(FocalTerm, HandEvaluatedHalf) {
  Eigen::VectorXd s(1), c(1);
  s << 0.5;
  c << 1;
  EXPECT_NEAR(focal_term(s, c, 2.0), 0.25 * std::log(2.0), 1e-12);
  EXPECT_NEAR(focal_term(s, c, 2.0), 0.173287, 1e-6);
}

TEST(FocalTerm, GammaZeroIsBinaryCrossEntropy) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int K = static_cast<int>(rng.uniform_int(1, 6));
    Eigen::VectorXd s(K);
    for (int k = 0; k < K; ++k) s(k) = rng.uniform(0.01, 0.99);
    const Eigen::VectorXd c = onehot(K, static_cast<int>(rng.uniform_int(1, K)));
    double expect = 0;
    for (int k = 0; k < K; ++k) expect += bce(s(k), c(k));
    EXPECT_NEAR(focal_term(s, c, 0.0), expect, 1e-12);
  }
}

TEST(FocalTerm, HardExamplesDominate) {
  EXPECT_GT(focal_positive(0.1, 2.0), 10 * focal_positive(0.9, 2.0));
}

TEST(FocalTerm, GradientMatchesFiniteDifference) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd s(3);
    for (int k = 0; k < 3; ++k) s(k) = rng.uniform(0.05, 0.95);
    const Eigen::VectorXd c = onehot(3, static_cast<int>(rng.uniform_int(1, 3)));
    const double gamma = rng.uniform(0, 3);
    const Eigen::VectorXd g = focal_term_grad(s, c, gamma);
    for (int k = 0; k < 3; ++k) {
      Eigen::VectorXd up = s, dn = s;
      up(k) += 1e-6;
      dn(k) -= 1e-6;
      const double fd = (focal_term(up, c, gamma) - focal_term(dn, c, gamma)) / 2e-6;
      EXPECT_NEAR(g(k), fd, 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(MilScores, SingletonBag) {
  Rng rng(3);
  const Heads h = random_heads(3, 4, rng);
  const RowMatrix f = random_rows(1, 4, rng);
  const ScoreSet s = mil_scores(f, h);
  for (int k = 0; k < 3; ++k) {
    EXPECT_DOUBLE_EQ(s.s_ins(0, k), 1.0);
    EXPECT_DOUBLE_EQ(s.s_bag(k), s.s_cls(0, k));
  }
}

TEST(MilScores, UniformInstanceLogitsAverage) {
  Rng rng(4);
  const RowMatrix cls = random_rows(6, 2, rng, 3.0);
  const RowMatrix ins = RowMatrix::Constant(6, 2, 0.7);
  const ScoreSet s = scores_from_logits(cls, ins);
  for (int k = 0; k < 2; ++k) {
    for (int p = 0; p < 6; ++p) EXPECT_NEAR(s.s_ins(p, k), 1.0 / 6, 1e-15);
    EXPECT_NEAR(s.s_bag(k), s.s_cls.col(k).mean(), 1e-15);
  }
}

TEST(MilScores, MatchesDirectRecomputation) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Heads h = random_heads(3, 4, rng);
    const RowMatrix f = random_rows(5, 4, rng, 2.0);
    const ScoreSet s = mil_scores(f, h);
    for (int k = 0; k < 3; ++k) {
      double denom = 0, bag = 0, ins_sum = 0;
      std::vector<double> cls(5), ins(5);
      for (int p = 0; p < 5; ++p) {
        double oc = h.cls.bias(k), oi = h.ins.bias(k);
        for (int j = 0; j < 4; ++j) {
          oc += h.cls.weight(k, j) * f(p, j);
          oi += h.ins.weight(k, j) * f(p, j);
        }
        cls[p] = 1 / (1 + std::exp(-oc));
        ins[p] = std::exp(oi);
        denom += ins[p];
      }
      for (int p = 0; p < 5; ++p) {
        bag += ins[p] / denom * cls[p];
        ins_sum += s.s_ins(p, k);
        EXPECT_NEAR(s.s_over(p, k), ins[p] / denom * cls[p], 1e-12);
      }
      EXPECT_NEAR(s.s_bag(k), bag, 1e-12);
      EXPECT_NEAR(ins_sum, 1.0, 1e-9);
      EXPECT_GT(s.s_bag(k), 0.0);
      EXPECT_LT(s.s_bag(k), 1.0);
    }
  }
}

TEST(MilScores, EmptyBagThrows) {
  Rng rng(6);
  const Heads h = random_heads(2, 3, rng);
  EXPECT_THROW(mil_scores(RowMatrix(0, 3), h), InvalidArgument);
}

TEST(MilScores, LargeLogitsStayFinite) {
  RowMatrix cls(3, 1), ins(3, 1);
  cls << 800, -800, 0;
  ins << 900, -900, 899;
  const ScoreSet s = scores_from_logits(cls, ins);
  EXPECT_TRUE(s.s_bag.allFinite());
  EXPECT_NEAR(s.s_ins.col(0).sum(), 1.0, 1e-12);
}

std::vector<LabeledScores> random_labeled(int n, int K, Rng& rng) {
  std::vector<LabeledScores> out;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd s(K);
    for (int k = 0; k < K; ++k) s(k) = rng.uniform(0.01, 0.99);
    out.push_back({s, static_cast<int>(rng.uniform_int(1, K))});
  }
  return out;
}

TEST(MilLoss, PerfectBagNearZero) {
  const std::vector<LabeledScores> items{{onehot(3, 1), 1}};
  EXPECT_NEAR(mil_loss(items, 2.0).value, 0.0, 1e-5);
}

TEST(MilLoss, MeanInvariantUnderDuplication) {
  Rng rng(7);
  auto one = random_labeled(1, 3, rng);
  auto two = one;
  two.push_back(one[0]);
  EXPECT_NEAR(mil_loss(one, 2.0).value, mil_loss(two, 2.0).value, 1e-15);
}

TEST(MilLoss, MatchesSummation) {
  Rng rng(8);
  const auto items = random_labeled(3, 4, rng);
  double expect = 0;
  for (const auto& it : items) {
    for (int k = 0; k < 4; ++k) {
      const double s = it.scores(k);
      expect += (k == it.category - 1) ? -std::pow(1 - s, 2) * std::log(s) : -std::pow(s, 2) * std::log(1 - s);
    }
  }
  EXPECT_NEAR(mil_loss(items, 2.0).value, expect / 3, 1e-12);
}

TEST(MilLoss, NoInstancesIsZeroWithFlag) {
  const LossTerm t = mil_loss({}, 2.0);
  EXPECT_EQ(t.value, 0.0);
  EXPECT_TRUE(t.no_instances);
  EXPECT_TRUE(ann_loss({}, 2.0).no_instances);
}

TEST(AnnLoss, Examples) {
  Eigen::VectorXd half(1);
  half << 0.5;
  const std::vector<LabeledScores> single{{half, 1}};
  EXPECT_NEAR(ann_loss(single, 2.0).value, 0.173287, 1e-6);
  const std::vector<LabeledScores> perfect{{onehot(2, 2), 2}, {onehot(2, 1), 1}};
  EXPECT_NEAR(ann_loss(perfect, 2.0).value, 0.0, 1e-5);

  Rng rng(9);
  auto items = random_labeled(5, 3, rng);
  const double a = ann_loss(items, 2.0).value;
  std::reverse(items.begin(), items.end());
  std::rotate(items.begin(), items.begin() + 2, items.end());
  EXPECT_NEAR(ann_loss(items, 2.0).value, a, 1e-14);
}

TEST(NegLoss, Examples) {
  EXPECT_NEAR(neg_loss({{0.5}}, 1, 2.0), 0.173287, 1e-6);
  EXPECT_NEAR(neg_loss({{1e-9, 1e-12}, {0.0}}, 1, 2.0), 0.0, 1e-12);
  const std::vector<std::vector<double>> s{{0.2, 0.7}, {0.4}};
  EXPECT_NEAR(neg_loss(s, 2, 2.0), 0.5 * neg_loss(s, 1, 2.0), 1e-15);
  EXPECT_THROW(neg_loss(s, 0, 2.0), InvalidArgument);
}

struct Fixture {
  Heads heads;
  LossInputs in;
};

Fixture random_fixture(Rng& rng, int K = 3, int d = 4, int bags = 2, int negatives = 10) {
  Fixture f;
  f.heads = random_heads(K, d, rng);
  f.in.num_categories = K;
  for (int j = 0; j < bags; ++j)
    f.in.bags.push_back({random_rows(static_cast<int>(rng.uniform_int(1, 6)), d, rng), static_cast<int>(rng.uniform_int(1, K))});
  f.in.annotation_features = random_rows(bags, d, rng);
  f.in.negative_features = random_rows(negatives, d, rng);
  for (int p = 0; p < negatives; ++p)
    f.in.negative_categories.push_back(static_cast<std::uint32_t>(rng.uniform_int(0, (1 << K) - 1)));
  return f;
}

double independent_total(const Fixture& f, const LossConfig& cfg, double* mil, double* ann, double* neg) {
  const int K = f.in.num_categories;
  const int M = static_cast<int>(f.in.bags.size());
  double lm = 0, la = 0, ln = 0;
  for (int j = 0; j < M; ++j) {
    const auto s = mil_scores(f.in.bags[j].features, f.heads);
    lm += focal_term(s.s_bag, onehot(K, f.in.bags[j].category), cfg.gamma);
    const Eigen::VectorXd fa = f.in.annotation_features.row(j).transpose();
    la += focal_term(sigmoid(Eigen::VectorXd(f.heads.cls.weight * fa + f.heads.cls.bias)),
                     onehot(K, f.in.bags[j].category), cfg.gamma);
  }
  std::vector<std::vector<double>> per(K);
  for (Eigen::Index p = 0; p < f.in.negative_features.rows(); ++p) {
    const Eigen::VectorXd fp = f.in.negative_features.row(p).transpose();
    const Eigen::VectorXd s = sigmoid(Eigen::VectorXd(f.heads.cls.weight * fp + f.heads.cls.bias));
    for (int k = 0; k < K; ++k)
      if (f.in.negative_categories[p] & (1u << k)) per[k].push_back(s(k));
  }
  ln = neg_loss(per, M, cfg.gamma);
  *mil = lm / M;
  *ann = la / M;
  *neg = ln;
  return *mil + cfg.alpha_ann * *ann + cfg.alpha_neg * *neg;
}

TEST(CprLoss, RecombinationWithDefaultWeights) {
  Rng rng(10);
  const Fixture f = random_fixture(rng);
  const LossConfig cfg;
  EXPECT_EQ(cfg.alpha_ann, 0.5);
  EXPECT_EQ(cfg.alpha_neg, 3.0);
  const LossBreakdown out = cpr_loss(f.heads, f.in, cfg);
  double m, a, n;
  const double total = independent_total(f, cfg, &m, &a, &n);
  EXPECT_NEAR(out.l_mil, m, 1e-12);
  EXPECT_NEAR(out.l_ann, a, 1e-12);
  EXPECT_NEAR(out.l_neg, n, 1e-12);
  EXPECT_NEAR(out.l_total, total, 1e-12);
  EXPECT_NEAR(out.l_total, out.l_mil + 0.5 * out.l_ann + 3 * out.l_neg, 1e-12);
  EXPECT_GE(out.l_mil, 0);
  EXPECT_GE(out.l_ann, 0);
  EXPECT_GE(out.l_neg, 0);
}

TEST(CprLoss, ZeroWeightsLeaveMil) {
  Rng rng(11);
  const Fixture f = random_fixture(rng);
  LossConfig cfg;
  cfg.alpha_ann = cfg.alpha_neg = 0;
  const LossBreakdown out = cpr_loss(f.heads, f.in, cfg);
  EXPECT_EQ(out.l_total, out.l_mil);
}

TEST(CprLoss, ShapeMismatchesThrow) {
  Rng rng(12);
  Fixture f = random_fixture(rng);
  Fixture g = f;
  g.in.annotation_features = random_rows(3, 4, rng);
  EXPECT_THROW(cpr_loss(g.heads, g.in, {}), InvalidArgument);
  g = f;
  g.in.bags[0].category = 4;
  EXPECT_THROW(cpr_loss(g.heads, g.in, {}), InvalidArgument);
  g = f;
  g.in.negative_categories.pop_back();
  EXPECT_THROW(cpr_loss(g.heads, g.in, {}), InvalidArgument);
  g = f;
  g.in.bags[1].features = random_rows(2, 5, rng);
  EXPECT_THROW(cpr_loss(g.heads, g.in, {}), InvalidArgument);
  g = f;
  g.in.bags[1].features = RowMatrix(0, 4);
  EXPECT_THROW(cpr_loss(g.heads, g.in, {}), InvalidArgument);
}

TEST(CprLoss, NoBagsIsZeroAndFlagged) {
  Rng rng(13);
  Fixture f = random_fixture(rng, 2, 3, 0, 4);
  const LossBreakdown out = cpr_loss(f.heads, f.in, {});
  EXPECT_TRUE(out.no_instances);
  EXPECT_EQ(out.l_mil, 0.0);
  EXPECT_EQ(out.l_ann, 0.0);
  EXPECT_TRUE(std::isfinite(out.l_total));
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-8, std::max(std::abs(a), std::abs(b))); }

// Perturbs every scalar reachable via `slot`, checks analytic vs central difference.
void check_fd(Fixture f, const LossConfig& cfg, const std::function<double&(Fixture&, int)>& slot, int count,
              const std::function<double(const LossBreakdown&, int)>& analytic) {
  const LossBreakdown base = cpr_loss(f.heads, f.in, cfg);
  const double h = 1e-4;
  for (int i = 0; i < count; ++i) {
    double& v = slot(f, i);
    const double keep = v;
    v = keep + h;
    const double up = cpr_loss(f.heads, f.in, cfg).l_total;
    v = keep - h;
    const double dn = cpr_loss(f.heads, f.in, cfg).l_total;
    v = keep;
    const double fd = (up - dn) / (2 * h);
    const double an = analytic(base, i);
    if (std::abs(fd) < 1e-7 && std::abs(an) < 1e-7) continue;
    EXPECT_LT(rel_err(an, fd), 1e-4) << "entry " << i << " analytic " << an << " fd " << fd;
  }
}

TEST(CprLoss, AllGradientsMatchFiniteDifferences) {
  Rng rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    const Fixture f = random_fixture(rng);
    const LossConfig cfg;
    const int K = 3, d = 4;
    check_fd(f, cfg, [](Fixture& x, int i) -> double& { return x.heads.cls.weight.data()[i]; }, K * d,
             [](const LossBreakdown& b, int i) { return b.heads.cls.weight.data()[i]; });
    check_fd(f, cfg, [](Fixture& x, int i) -> double& { return x.heads.ins.weight.data()[i]; }, K * d,
             [](const LossBreakdown& b, int i) { return b.heads.ins.weight.data()[i]; });
    check_fd(f, cfg, [](Fixture& x, int i) -> double& { return x.heads.cls.bias(i); }, K,
             [](const LossBreakdown& b, int i) { return b.heads.cls.bias(i); });
    check_fd(f, cfg, [](Fixture& x, int i) -> double& { return x.heads.ins.bias(i); }, K,
             [](const LossBreakdown& b, int i) { return b.heads.ins.bias(i); });
    for (int j = 0; j < 2; ++j) {
      const int n = static_cast<int>(f.in.bags[j].features.size());
      check_fd(f, cfg, [j](Fixture& x, int i) -> double& { return x.in.bags[j].features.data()[i]; }, n,
               [j](const LossBreakdown& b, int i) { return b.bag_feature_grads[j].data()[i]; });
    }
    check_fd(f, cfg, [](Fixture& x, int i) -> double& { return x.in.annotation_features.data()[i]; }, 2 * d,
             [](const LossBreakdown& b, int i) { return b.annotation_feature_grads.data()[i]; });
    check_fd(f, cfg, [](Fixture& x, int i) -> double& { return x.in.negative_features.data()[i]; }, 10 * d,
             [](const LossBreakdown& b, int i) { return b.negative_feature_grads.data()[i]; });
  }
}

TEST(CprLoss, NegativesDoNotTouchInstanceHead) {
  Rng rng(15);
  Fixture f = random_fixture(rng);
  f.in.bags.clear();
  f.in.annotation_features = RowMatrix(0, 4);
  // With no bags, the only contributions come from negatives.
  const LossBreakdown only_neg = cpr_loss(f.heads, f.in, {});
  EXPECT_TRUE(only_neg.heads.ins.weight.isZero(0));
  EXPECT_TRUE(only_neg.heads.ins.bias.isZero(0));
  EXPECT_GT(only_neg.heads.cls.weight.norm(), 0);
}

TEST(CprLoss, FeatureGradientsCanBeSkipped) {
  Rng rng(16);
  const Fixture f = random_fixture(rng);
  LossConfig cfg;
  cfg.feature_gradients = false;
  const LossBreakdown a = cpr_loss(f.heads, f.in, cfg);
  const LossBreakdown b = cpr_loss(f.heads, f.in, {});
  EXPECT_TRUE(a.bag_feature_grads.empty());
  EXPECT_EQ(a.l_total, b.l_total);
  EXPECT_EQ(a.heads.cls.weight, b.heads.cls.weight);
}

}  // namespace
}  // namespace cpr
