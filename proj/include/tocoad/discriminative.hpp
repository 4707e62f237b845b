#pragma once

#include "tocoad/backbone.hpp"
#include "tocoad/synthesis.hpp"

#include <functional>
#include <vector>

namespace tocoad {

// Per-pixel two-class output of the decoder; channel 1 is "anomalous".
struct PredictedMask {
  Tensor logits;         // (n, 2, h, w)
  Tensor probabilities;  // softmax over the channel axis
};

struct FocalParams {
  Scalar alpha_anomalous = 0.75;
  Scalar gamma = 2.0;

  void validate() const;
  ag::FocalSpec spec() const { return {alpha_anomalous, gamma, false, 1e-7}; }
};

// Mirror of the backbone: starting from level 4, upsample x2, concatenate
// the next-shallower level, compress with a 1x1 conv and refine with a 3x3
// conv; a 1x1 conv to two channels at stride 4 is resized x4 to the input.
class Decoder {
 public:
  Decoder() = default;
  Decoder(const BackboneSpec& spec, std::uint64_t seed);

  ag::Var forward(const FeaturePyramid& pyramid) const;
  PredictedMask decode(const FeaturePyramid& pyramid) const;

  bool initialized() const { return !fuse_.empty(); }
  nn::ParameterSet parameters() const;
  void freeze() const { parameters().set_trainable(false); }

 private:
  struct Fuse {
    nn::Conv2d compress, refine;
  };
  std::vector<Fuse> fuse_;  // index 0 fuses into level 3, ..., 2 into level 1
  nn::Conv2d head_;
};

PredictedMask to_predicted_mask(const Tensor& logits);

Scalar focal_loss(const PredictedMask& pred, const Mask& target, const FocalParams& params);
ag::Var focal_loss(const ag::Var& logits, const Tensor& target, const FocalParams& params);
// Unweighted mean cross-entropy: the gamma = 0, alpha_t = 1 reduction.
ag::Var cross_entropy_loss(const ag::Var& logits, const Tensor& target);

// Picks the texture (perlin) or donor (nsa) used to synthesize an anomaly
// on train sample `base_index`: an external corpus image when configured,
// otherwise a different training image of the same category.
ImageSample pick_partner(const DatasetSplit& train, const TextureCorpus* corpus, const GeneratorConfig& cfg,
                         std::size_t base_index, Rng& rng);

struct Stage1Options {
  int epochs = 100;
  int batch_size = 16;
  Scalar lr = 1e-4;
  std::vector<int> milestones{80, 90};
  Scalar decay = 0.2;
  FocalParams focal;
};

struct EpochLoss {
  int epoch = 0;
  Scalar mean_loss = 0;
};

// Fixed-order minibatches of a shuffled index list. A trailing batch of one
// is merged into its predecessor so batch statistics stay defined.
std::vector<std::vector<std::size_t>> make_batches(std::size_t count, int batch_size, Rng& rng);

// Trains D on synthetic anomalies with F frozen; F is left bit-identical.
std::vector<EpochLoss> train_stage1(const DatasetSplit& train, const TextureCorpus* corpus, const GeneratorConfig& gen,
                                    const Backbone& backbone, Decoder& decoder, const Stage1Options& options,
                                    std::uint64_t seed,
                                    const std::function<void(const EpochLoss&)>& on_epoch = {});

}  // namespace tocoad
