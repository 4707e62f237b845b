#pragma once

#include "tocoad/discriminative.hpp"

#include <functional>
#include <vector>

namespace tocoad {

enum class Augmentation { random_resized_crop, color_jitter, grayscale };
enum class NegativeLoss { focal, cross_entropy };
enum class ContrastiveArchitecture { simsiam, byol };

struct NclConfig {
  Scalar lambda = 0.5;
  std::vector<int> levels{3, 4};
  int views = 2;
  std::vector<Augmentation> augmentations{Augmentation::random_resized_crop, Augmentation::color_jitter,
                                          Augmentation::grayscale};
  NegativeLoss neg_loss = NegativeLoss::focal;
  bool concat_levels = false;
  ContrastiveArchitecture architecture = ContrastiveArchitecture::simsiam;

  // Head shapes; projector_hidden = 0 means "same as the input width".
  Index projector_hidden = 0;
  Index projector_out = 2048;
  Index predictor_hidden = 512;

  Scalar crop_scale_min = 0.5;
  Scalar crop_scale_max = 1.0;
  Scalar jitter_probability = 0.8;
  Scalar brightness = 0.4;
  Scalar contrast = 0.4;
  Scalar saturation = 0.4;
  Scalar hue = 0.1;
  Scalar grayscale_probability = 0.2;
  Scalar byol_momentum = 0.99;

  void validate() const;
};

struct ViewPair {
  std::vector<Image> views;
  std::string base;
};

ViewPair augment_views(const ImageSample& sample, const NclConfig& cfg, std::uint64_t seed);

// Projector (3 x Linear, BN after each, ReLU on the first two) and predictor
// (Linear-BN-ReLU-Linear) per selected level, or a single pair over the
// concatenated levels. Projector weights are shared by both branches.
class ContrastiveHead {
 public:
  struct Output {
    ag::Var z;  // projected
    ag::Var p;  // predicted
  };

  ContrastiveHead() = default;
  ContrastiveHead(const BackboneSpec& backbone, const NclConfig& cfg, std::uint64_t seed);
  // Identity head: z = p = pooled features. Used to check loss algebra.
  static ContrastiveHead identity(std::size_t groups);

  std::size_t groups() const { return groups_; }
  Output forward(std::size_t group, const ag::Var& pooled) const;
  ag::Var project(std::size_t group, const ag::Var& pooled) const;
  nn::ParameterSet parameters() const;
  nn::ParameterSet projector_parameters() const;

 private:
  struct Mlp {
    std::vector<nn::Linear> linear;
    std::vector<nn::BatchNorm1d> norm;
  };
  std::size_t groups_ = 0;
  bool identity_ = false;
  std::vector<Mlp> projector_, predictor_;
};

// Groups the pooled level vectors of one view into head inputs: one per
// level, or one concatenated vector when cfg.concat_levels is set.
std::vector<ag::Var> head_inputs(const FeaturePyramid& pyramid, const NclConfig& cfg);

// D(p, z) = -(p/|p|).(z/|z|), averaged over rows; z receives no gradient.
ag::Var cosine_loss(const ag::Var& p, const ag::Var& z);
Scalar cosine_loss(const Eigen::VectorXd& p, const Eigen::VectorXd& z);

// 1/2 D(p1, SG z2) + 1/2 D(p2, SG z1), averaged over head groups.
ag::Var symmetric_loss(const std::vector<ag::Var>& f1, const std::vector<ag::Var>& f2, const ContrastiveHead& head);

// Mean of the pairwise symmetric loss over ordered view pairs; equals
// symmetric_loss for two views. Optional targets replace the stop-gradient
// z of each view (momentum-encoder variant).
ag::Var multiview_loss(const std::vector<std::vector<ag::Var>>& view_features, const ContrastiveHead& head,
                       const std::vector<std::vector<ag::Var>>* targets = nullptr);

// Focal (or cross-entropy) loss of the frozen decoder on synthetic anomalies
// pushed through the current extractor. Gradients reach F only.
ag::Var negative_loss(const std::vector<const SyntheticAnomaly*>& synthetic, const Backbone& backbone,
                      const Decoder& frozen_decoder, const FocalParams& params, NegativeLoss kind = NegativeLoss::focal);

// lambda * sym + (1 - lambda) * neg
ag::Var ncl_loss(const ag::Var& sym, const ag::Var& neg, Scalar lambda);
Scalar ncl_loss(Scalar sym, Scalar neg, Scalar lambda);

struct Stage2Options {
  int epochs = 100;
  int batch_size = 16;
  Scalar lr = 0.003125;  // 0.05 * batch / 256
  Scalar momentum = 0.9;
  Scalar weight_decay = 1e-4;
  std::set<int> trainable_stages{0, 1, 2, 3, 4};
  FocalParams focal;
};

struct Stage2EpochLoss {
  int epoch = 0;
  Scalar sym = 0;
  Scalar neg = 0;
  Scalar ncl = 0;
};

// Joint update of F and C under the frozen D; D is left bit-identical.
std::vector<Stage2EpochLoss> train_stage2(const DatasetSplit& train, const TextureCorpus* corpus,
                                          const GeneratorConfig& gen, const NclConfig& cfg, Backbone& backbone,
                                          ContrastiveHead& head, const Decoder& frozen_decoder,
                                          const Stage2Options& options, std::uint64_t seed,
                                          const std::function<void(const Stage2EpochLoss&)>& on_epoch = {});

}  // namespace tocoad
