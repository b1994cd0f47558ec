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

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "cpr/sampling.hpp"

namespace cpr {

inline constexpr double kProbabilityClamp = 1e-7;

// Affine map d -> K.
struct LinearHead {
  Eigen::MatrixXd weight;  // K x d
  Eigen::VectorXd bias;    // K

  LinearHead() = default;
  LinearHead(int num_categories, int dim)
      : weight(Eigen::MatrixXd::Zero(num_categories, dim)),
        bias(Eigen::VectorXd::Zero(num_categories)) {}

  int outputs() const { return static_cast<int>(weight.rows()); }
  int inputs() const { return static_cast<int>(weight.cols()); }

  // One row of logits per row of `features` (n x d -> n x K).
  RowMatrix apply(const Eigen::Ref<const RowMatrix>& features) const;
  Eigen::VectorXd apply_one(const Eigen::Ref<const Eigen::VectorXd>& feature) const;
};

// Classification and instance-selection branches.
struct Heads {
  LinearHead cls;
  LinearHead ins;
};

struct HeadGradients {
  LinearHead cls;
  LinearHead ins;

  HeadGradients() = default;
  HeadGradients(int num_categories, int dim) : cls(num_categories, dim), ins(num_categories, dim) {}
};

double sigmoid(double x);
Eigen::VectorXd sigmoid(const Eigen::VectorXd& x);
RowMatrix sigmoid(const RowMatrix& x);

// Focal term summed over categories, negated so that it is nonnegative:
//   -sum_k [ c_k (1-S_k)^g log S_k + (1-c_k) S_k^g log(1-S_k) ]
// S is clamped to [1e-7, 1-1e-7] first.
double focal_term(const Eigen::Ref<const Eigen::VectorXd>& scores,
                  const Eigen::Ref<const Eigen::VectorXd>& onehot, double gamma);
// d focal_term / d S (zero where the clamp is active).
Eigen::VectorXd focal_term_grad(const Eigen::Ref<const Eigen::VectorXd>& scores,
                                const Eigen::Ref<const Eigen::VectorXd>& onehot, double gamma);

// Single-category pieces of the focal term.
double focal_positive(double s, double gamma);
double focal_positive_grad(double s, double gamma);
double focal_negative(double s, double gamma);
double focal_negative_grad(double s, double gamma);

// Per-point and bag-level scores of one bag (n points, K categories).
struct ScoreSet {
  RowMatrix cls_logits;  // n x K
  RowMatrix ins_logits;  // n x K
  RowMatrix s_cls;       // sigmoid(cls_logits)
  RowMatrix s_ins;       // softmax over the bag, per category
  RowMatrix s_over;      // s_ins .* s_cls
  Eigen::VectorXd s_bag; // column sums of s_over
};

ScoreSet scores_from_logits(const Eigen::Ref<const RowMatrix>& cls_logits,
                            const Eigen::Ref<const RowMatrix>& ins_logits);
// Throws InvalidArgument on an empty bag.
ScoreSet mil_scores(const Eigen::Ref<const RowMatrix>& bag_features, const Heads& heads);

// A loss averaged over instances. `no_instances` flags the M = 0 case, where
// the value is defined as 0.
struct LossTerm {
  double value = 0.0;
  bool no_instances = false;
};

struct LabeledScores {
  Eigen::VectorXd scores;  // K
  int category = 1;        // 1..K
};

LossTerm mil_loss(std::span<const LabeledScores> bag_scores, double gamma);
LossTerm ann_loss(std::span<const LabeledScores> annotated_scores, double gamma);
// neg_scores[k - 1] holds S_{p,k} for every p in Neg_k. Requires M >= 1.
double neg_loss(const std::vector<std::vector<double>>& neg_scores, int num_instances,
                double gamma);

struct LossConfig {
  double gamma = 2.0;
  double alpha_ann = 0.5;
  double alpha_neg = 3.0;
  bool feature_gradients = true;
};

struct BagInput {
  RowMatrix features;  // n x d, one row per bag point
  int category = 1;
};

// Everything the combined objective needs for one image.
struct LossInputs {
  int num_categories = 1;
  std::vector<BagInput> bags;
  // Features of the annotated points, one row per bag, in bag order.
  RowMatrix annotation_features;
  // Negative cells: one row per cell plus a bitmask of the categories k for
  // which the cell belongs to Neg_k (bit k - 1).
  RowMatrix negative_features;
  std::vector<std::uint32_t> negative_categories;
};

struct LossBreakdown {
  double l_mil = 0.0;
  double l_ann = 0.0;
  double l_neg = 0.0;
  double l_total = 0.0;
  bool no_instances = false;

  HeadGradients heads;
  // Gradients with respect to the input feature rows (same shapes as the
  // inputs). Left empty when LossConfig::feature_gradients is false.
  std::vector<RowMatrix> bag_feature_grads;
  RowMatrix annotation_feature_grads;
  RowMatrix negative_feature_grads;
};

// l_total = l_mil + alpha_ann * l_ann + alpha_neg * l_neg, with analytic
// gradients for both heads and every input feature row.
LossBreakdown cpr_loss(const Heads& heads, const LossInputs& inputs, const LossConfig& config);

}  // namespace cpr
