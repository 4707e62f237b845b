#include "tocoad/discriminative.hpp"

#include <algorithm>
#include <numeric>

namespace tocoad {

void FocalParams::validate() const {
  if (!(alpha_anomalous > 0 && alpha_anomalous < 1)) throw ConfigError("focal alpha must lie in (0,1)");
  if (!(gamma >= 0)) throw ConfigError("focal gamma must be >= 0");
}

Decoder::Decoder(const BackboneSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  Index current = spec.width(4);
  for (int level = 3; level >= 1; --level) {
    const Index target = spec.width(level);
    Fuse f;
    f.compress = nn::Conv2d(current + target, target, 1, 1, 0, rng);
    f.refine = nn::Conv2d(target, target, 3, 1, 1, rng);
    fuse_.push_back(f);
    current = target;
  }
  head_ = nn::Conv2d(current, 2, 1, 1, 0, rng);
}

ag::Var Decoder::forward(const FeaturePyramid& pyramid) const {
  if (!initialized()) throw StateError("decoder weights are not initialized");
  for (int l = 1; l <= 4; ++l)
    if (!pyramid.level(l)) throw ArgumentError("decode: pyramid is missing level " + std::to_string(l));
  ag::Var x = pyramid.level(4);
  for (std::size_t i = 0; i < fuse_.size(); ++i) {
    const ag::Var& skip = pyramid.level(3 - static_cast<int>(i));
    const Shape ss = skip->value.shape();
    x = ag::resize_bilinear(x, ss.h, ss.w);
    x = ag::concat_channels({x, skip});
    x = ag::relu(fuse_[i].compress(x));
    x = ag::relu(fuse_[i].refine(x));
  }
  return ag::resize_bilinear(head_(x), pyramid.source_height, pyramid.source_width);
}

PredictedMask to_predicted_mask(const Tensor& logits) {
  PredictedMask out;
  out.logits = logits;
  out.probabilities = Tensor(logits.shape());
  for (Index n = 0; n < logits.shape().n; ++n) {
    const auto l0 = logits.plane(n, 0).array();
    const auto l1 = logits.plane(n, 1).array();
    const Eigen::ArrayXXd p1 = 1.0 / (1.0 + (l0 - l1).exp());
    out.probabilities.plane(n, 1) = p1.matrix();
    out.probabilities.plane(n, 0) = (1.0 - p1).matrix();
  }
  return out;
}

PredictedMask Decoder::decode(const FeaturePyramid& pyramid) const { return to_predicted_mask(forward(pyramid)->value); }

nn::ParameterSet Decoder::parameters() const {
  nn::ParameterSet set;
  for (std::size_t i = 0; i < fuse_.size(); ++i) {
    const std::string prefix = "up" + std::to_string(3 - i);
    fuse_[i].compress.collect(set, prefix + ".compress");
    fuse_[i].refine.collect(set, prefix + ".refine");
  }
  head_.collect(set, "head");
  return set;
}

ag::Var focal_loss(const ag::Var& logits, const Tensor& target, const FocalParams& params) {
  params.validate();
  return ag::focal_loss(logits, target, params.spec());
}

ag::Var cross_entropy_loss(const ag::Var& logits, const Tensor& target) {
  return ag::focal_loss(logits, target, ag::FocalSpec{0.5, 0.0, true, 1e-7});
}

Scalar focal_loss(const PredictedMask& pred, const Mask& target, const FocalParams& params) {
  if (pred.logits.shape().n != 1) throw ArgumentError("focal_loss: expects a single prediction");
  return ag::item(focal_loss(ag::constant(pred.logits), mask_tensor({&target}), params));
}

ImageSample pick_partner(const DatasetSplit& train, const TextureCorpus* corpus, const GeneratorConfig& cfg,
                         std::size_t base_index, Rng& rng) {
  const bool external = cfg.kind == GeneratorKind::perlin && cfg.texture_source == TextureSource::external_corpus;
  if (external) {
    if (!corpus || corpus->images.empty()) throw ConfigError("external texture corpus configured but empty");
    ImageSample tex;
    tex.pixels = corpus->images[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(corpus->images.size()) - 1))];
    tex.path = corpus->source.string();
    return tex;
  }
  if (train.size() == 1) return train.samples[0];
  auto other = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(train.size()) - 2));
  if (other >= base_index) ++other;
  return train.samples[other];
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, int batch_size, Rng& rng) {
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < count; i += static_cast<std::size_t>(batch_size))
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(count, i + static_cast<std::size_t>(batch_size))));
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

std::vector<EpochLoss> train_stage1(const DatasetSplit& train, const TextureCorpus* corpus, const GeneratorConfig& gen,
                                    const Backbone& backbone, Decoder& decoder, const Stage1Options& options,
                                    std::uint64_t seed, const std::function<void(const EpochLoss&)>& on_epoch) {
  if (train.samples.empty()) throw ArgumentError("train_stage1: empty training split");
  gen.validate();
  options.focal.validate();
  backbone.freeze();
  const nn::ParameterSet params = decoder.parameters();
  params.set_trainable(true);
  nn::Adam optimizer(params, options.lr);
  const nn::MultiStepSchedule schedule{options.lr, options.milestones, options.decay};

  std::vector<EpochLoss> curve;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    optimizer.set_lr(schedule.at(epoch));
    Rng rng(mix_seed(seed, 1, static_cast<std::uint64_t>(epoch)));
    Scalar total = 0;
    std::size_t seen = 0;
    for (const auto& batch : make_batches(train.size(), options.batch_size, rng)) {
      std::vector<SyntheticAnomaly> synth;
      for (std::size_t i : batch) {
        const ImageSample partner = pick_partner(train, corpus, gen, i, rng);
        synth.push_back(synthesize(train.samples[i], partner, gen, mix_seed(seed, 2, static_cast<std::uint64_t>(epoch), i)));
      }
      std::vector<const Image*> images;
      std::vector<const Mask*> masks;
      for (const auto& s : synth) {
        images.push_back(&s.image);
        masks.push_back(&s.mask);
      }
      const FeaturePyramid pyramid = backbone.extract(to_tensor(images));
      const ag::Var loss = focal_loss(decoder.forward(pyramid), mask_tensor(masks), options.focal);
      params.zero_grad();
      ag::backward(loss);
      optimizer.step();
      total += ag::item(loss) * static_cast<Scalar>(batch.size());
      seen += batch.size();
    }
    curve.push_back({epoch + 1, total / static_cast<Scalar>(seen)});
    if (on_epoch) on_epoch(curve.back());
  }
  return curve;
}

}  // namespace tocoad
