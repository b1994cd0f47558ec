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

#include "cpr/objective.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cpr/error.hpp"

namespace cpr {

namespace {

double clamp_probability(double s) {
  return std::clamp(s, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

bool clamp_active(double s) { return s < kProbabilityClamp || s > 1.0 - kProbabilityClamp; }

void check_category(int category, int num_categories, const char* what) {
  if (category < 1 || category > num_categories)
    throw InvalidArgument(std::string(what) + ": category " + std::to_string(category) +
                          " outside 1.." + std::to_string(num_categories));
}

}  // namespace

RowMatrix LinearHead::apply(const Eigen::Ref<const RowMatrix>& features) const {
  RowMatrix out = features * weight.transpose();
  out.rowwise() += bias.transpose();
  return out;
}

Eigen::VectorXd LinearHead::apply_one(const Eigen::Ref<const Eigen::VectorXd>& feature) const {
  return weight * feature + bias;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Eigen::VectorXd sigmoid(const Eigen::VectorXd& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

RowMatrix sigmoid(const RowMatrix& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

double focal_positive(double s, double gamma) {
  s = clamp_probability(s);
  return -std::pow(1.0 - s, gamma) * std::log(s);
}

double focal_positive_grad(double s, double gamma) {
  if (clamp_active(s)) return 0.0;
  const double q = 1.0 - s;
  const double dpow = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0);
  return dpow * std::log(s) - std::pow(q, gamma) / s;
}

double focal_negative(double s, double gamma) {
  s = clamp_probability(s);
  return -std::pow(s, gamma) * std::log(1.0 - s);
}

double focal_negative_grad(double s, double gamma) {
  if (clamp_active(s)) return 0.0;
  const double dpow = gamma == 0.0 ? 0.0 : gamma * std::pow(s, gamma - 1.0);
  return -dpow * std::log(1.0 - s) + std::pow(s, gamma) / (1.0 - s);
}

double focal_term(const Eigen::Ref<const Eigen::VectorXd>& scores,
                  const Eigen::Ref<const Eigen::VectorXd>& onehot, double gamma) {
  double total = 0.0;
  for (Eigen::Index k = 0; k < scores.size(); ++k)
    total += onehot(k) * focal_positive(scores(k), gamma) +
             (1.0 - onehot(k)) * focal_negative(scores(k), gamma);
  return total;
}

Eigen::VectorXd focal_term_grad(const Eigen::Ref<const Eigen::VectorXd>& scores,
                                const Eigen::Ref<const Eigen::VectorXd>& onehot, double gamma) {
  Eigen::VectorXd g(scores.size());
  for (Eigen::Index k = 0; k < scores.size(); ++k)
    g(k) = onehot(k) * focal_positive_grad(scores(k), gamma) +
           (1.0 - onehot(k)) * focal_negative_grad(scores(k), gamma);
  return g;
}

ScoreSet scores_from_logits(const Eigen::Ref<const RowMatrix>& cls_logits,
                            const Eigen::Ref<const RowMatrix>& ins_logits) {
  if (cls_logits.rows() == 0) throw InvalidArgument("mil_scores: empty bag");
  if (cls_logits.rows() != ins_logits.rows() || cls_logits.cols() != ins_logits.cols())
    throw InvalidArgument("mil_scores: logit shapes differ");
  ScoreSet s;
  s.cls_logits = cls_logits;
  s.ins_logits = ins_logits;
  s.s_cls = sigmoid(RowMatrix(cls_logits));
  s.s_ins.resize(ins_logits.rows(), ins_logits.cols());
  for (Eigen::Index k = 0; k < ins_logits.cols(); ++k) {
    const double m = ins_logits.col(k).maxCoeff();
    Eigen::VectorXd e = (ins_logits.col(k).array() - m).exp();
    s.s_ins.col(k) = e / e.sum();
  }
  s.s_over = s.s_ins.cwiseProduct(s.s_cls);
  s.s_bag = s.s_over.colwise().sum().transpose();
  return s;
}

ScoreSet mil_scores(const Eigen::Ref<const RowMatrix>& bag_features, const Heads& heads) {
  if (bag_features.rows() == 0) throw InvalidArgument("mil_scores: empty bag");
  return scores_from_logits(heads.cls.apply(bag_features), heads.ins.apply(bag_features));
}

namespace {

LossTerm mean_focal(std::span<const LabeledScores> items, double gamma) {
  LossTerm out;
  if (items.empty()) {
    out.no_instances = true;
    return out;
  }
  const int k = static_cast<int>(items.front().scores.size());
  for (const auto& item : items) {
    check_category(item.category, k, "focal loss");
    Eigen::VectorXd c = Eigen::VectorXd::Zero(k);
    c(item.category - 1) = 1.0;
    out.value += focal_term(item.scores, c, gamma);
  }
  out.value /= static_cast<double>(items.size());
  return out;
}

}  // namespace

LossTerm mil_loss(std::span<const LabeledScores> bag_scores, double gamma) {
  return mean_focal(bag_scores, gamma);
}

LossTerm ann_loss(std::span<const LabeledScores> annotated_scores, double gamma) {
  return mean_focal(annotated_scores, gamma);
}

double neg_loss(const std::vector<std::vector<double>>& neg_scores, int num_instances,
                double gamma) {
  if (num_instances < 1) throw InvalidArgument("neg_loss: instance count must be >= 1");
  double total = 0.0;
  for (const auto& per_category : neg_scores)
    for (double s : per_category) total += focal_negative(s, gamma);
  return total / num_instances;
}

LossBreakdown cpr_loss(const Heads& heads, const LossInputs& in, const LossConfig& cfg) {
  const int K = in.num_categories;
  const int d = heads.cls.inputs();
  if (K < 1 || K > 32) throw InvalidArgument("cpr_loss: category count must be in 1..32");
  if (heads.cls.outputs() != K || heads.ins.outputs() != K || heads.ins.inputs() != d)
    throw InvalidArgument("cpr_loss: head shapes do not match the category count");
  const auto M = static_cast<int>(in.bags.size());
  if (in.annotation_features.rows() != M)
    throw InvalidArgument("cpr_loss: need exactly one annotation feature per bag");
  if (M > 0 && in.annotation_features.cols() != d)
    throw InvalidArgument("cpr_loss: annotation feature width differs from head input");
  if (in.negative_features.rows() != static_cast<Eigen::Index>(in.negative_categories.size()))
    throw InvalidArgument("cpr_loss: negative feature/category count mismatch");
  if (in.negative_features.rows() > 0 && in.negative_features.cols() != d)
    throw InvalidArgument("cpr_loss: negative feature width differs from head input");

  LossBreakdown out;
  out.heads = HeadGradients(K, d);
  out.no_instances = M == 0;
  const double inv_m = 1.0 / std::max(M, 1);

  // ---- MIL term --------------------------------------------------------
  if (cfg.feature_gradients) out.bag_feature_grads.resize(M);
  for (int j = 0; j < M; ++j) {
    const BagInput& bag = in.bags[j];
    check_category(bag.category, K, "cpr_loss");
    if (bag.features.rows() == 0) throw InvalidArgument("cpr_loss: empty bag");
    if (bag.features.cols() != d)
      throw InvalidArgument("cpr_loss: bag feature width differs from head input");
    const ScoreSet s = mil_scores(bag.features, heads);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(K);
    c(bag.category - 1) = 1.0;
    out.l_mil += inv_m * focal_term(s.s_bag, c, cfg.gamma);
    const Eigen::VectorXd g_bag = inv_m * focal_term_grad(s.s_bag, c, cfg.gamma);

    // dS_bag/dO_cls = S_ins * S_cls (1 - S_cls)
    // dS_bag/dO_ins = S_ins * (S_cls - S_bag)
    RowMatrix d_cls = s.s_ins.cwiseProduct(s.s_cls.cwiseProduct((1.0 - s.s_cls.array()).matrix()));
    RowMatrix d_ins = s.s_ins.cwiseProduct((s.s_cls.rowwise() - s.s_bag.transpose()));
    d_cls = d_cls * g_bag.asDiagonal();
    d_ins = d_ins * g_bag.asDiagonal();

    out.heads.cls.weight.noalias() += d_cls.transpose() * bag.features;
    out.heads.cls.bias += d_cls.colwise().sum().transpose();
    out.heads.ins.weight.noalias() += d_ins.transpose() * bag.features;
    out.heads.ins.bias += d_ins.colwise().sum().transpose();
    if (cfg.feature_gradients)
      out.bag_feature_grads[j] = d_cls * heads.cls.weight + d_ins * heads.ins.weight;
  }

  // ---- annotation term ---------------------------------------------------
  if (cfg.feature_gradients) out.annotation_feature_grads = RowMatrix::Zero(M, d);
  for (int j = 0; j < M; ++j) {
    const Eigen::VectorXd f = in.annotation_features.row(j).transpose();
    const Eigen::VectorXd sa = sigmoid(heads.cls.apply_one(f));
    Eigen::VectorXd c = Eigen::VectorXd::Zero(K);
    c(in.bags[j].category - 1) = 1.0;
    out.l_ann += inv_m * focal_term(sa, c, cfg.gamma);
    const Eigen::VectorXd g = (cfg.alpha_ann * inv_m) *
                              focal_term_grad(sa, c, cfg.gamma)
                                  .cwiseProduct(sa.cwiseProduct((1.0 - sa.array()).matrix()));
    out.heads.cls.weight.noalias() += g * f.transpose();
    out.heads.cls.bias += g;
    if (cfg.feature_gradients)
      out.annotation_feature_grads.row(j) = (heads.cls.weight.transpose() * g).transpose();
  }

  // ---- negative term -----------------------------------------------------
  const Eigen::Index n_neg = in.negative_features.rows();
  if (cfg.feature_gradients) out.negative_feature_grads = RowMatrix::Zero(n_neg, d);
  if (n_neg > 0) {
    const RowMatrix s = sigmoid(heads.cls.apply(in.negative_features));
    RowMatrix d_logit = RowMatrix::Zero(n_neg, K);
    const double w = cfg.alpha_neg * inv_m;
    double total = 0.0;
    for (Eigen::Index p = 0; p < n_neg; ++p) {
      const std::uint32_t mask = in.negative_categories[p];
      for (int k = 0; k < K; ++k) {
        if (!(mask & (1u << k))) continue;
        const double sk = s(p, k);
        total += focal_negative(sk, cfg.gamma);
        d_logit(p, k) = w * focal_negative_grad(sk, cfg.gamma) * sk * (1.0 - sk);
      }
    }
    out.l_neg = total * inv_m;
    out.heads.cls.weight.noalias() += d_logit.transpose() * in.negative_features;
    out.heads.cls.bias += d_logit.colwise().sum().transpose();
    if (cfg.feature_gradients) out.negative_feature_grads = d_logit * heads.cls.weight;
  }

  out.l_total = out.l_mil + cfg.alpha_ann * out.l_ann + cfg.alpha_neg * out.l_neg;
  return out;
}

}  // namespace cpr
