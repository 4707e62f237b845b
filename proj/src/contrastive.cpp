#include "tocoad/contrastive.hpp"

#include <cmath>
#include <numbers>
#include <optional>

namespace tocoad {

void NclConfig::validate() const {
  if (!(lambda >= 0 && lambda <= 1)) throw ConfigError("ncl lambda must lie in [0,1]");
  if (views < 2) throw ConfigError("ncl needs at least two views");
  if (levels.empty()) throw ConfigError("ncl level set is empty");
  for (int l : levels)
    if (l < 1 || l > 4) throw ConfigError("ncl level " + std::to_string(l) + " outside 1..4");
  if (projector_out < 1 || predictor_hidden < 1 || projector_hidden < 0) throw ConfigError("bad head dims");
  if (!(crop_scale_min > 0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1)) throw ConfigError("bad crop scale range");
  if (!(byol_momentum >= 0 && byol_momentum < 1)) throw ConfigError("byol momentum must lie in [0,1)");
}

namespace {

void clamp01(Image& img) {
  for (auto& c : img.channels) c = c.cwiseMax(0.0).cwiseMin(1.0);
}

Image random_resized_crop(const Image& img, const NclConfig& cfg, Rng& rng) {
  const Index h = img.height(), w = img.width();
  const Scalar area = static_cast<Scalar>(h * w);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const Scalar target = area * uniform(rng, cfg.crop_scale_min, cfg.crop_scale_max);
    const Scalar ratio = std::exp(uniform(rng, std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
    const auto cw = static_cast<Index>(std::lround(std::sqrt(target * ratio)));
    const auto ch = static_cast<Index>(std::lround(std::sqrt(target / ratio)));
    if (cw < 1 || ch < 1 || cw > w || ch > h) continue;
    const Index top = uniform_int(rng, 0, static_cast<int>(h - ch));
    const Index left = uniform_int(rng, 0, static_cast<int>(w - cw));
    return resize_bilinear(crop(img, top, left, ch, cw), h, w);
  }
  return img;
}

void color_jitter(Image& img, const NclConfig& cfg, Rng& rng) {
  const Scalar b = uniform(rng, std::max(0.0, 1 - cfg.brightness), 1 + cfg.brightness);
  const Scalar c = uniform(rng, std::max(0.0, 1 - cfg.contrast), 1 + cfg.contrast);
  const Scalar s = uniform(rng, std::max(0.0, 1 - cfg.saturation), 1 + cfg.saturation);
  const Scalar hshift = uniform(rng, -cfg.hue, cfg.hue);

  for (auto& ch : img.channels) ch *= b;
  clamp01(img);
  const Scalar mean = luminance(img).mean();
  for (auto& ch : img.channels) ch = (ch - mean) * c + mean;
  clamp01(img);
  if (img.channel_count() != 3) return;
  const Plane gray = luminance(img);
  for (auto& ch : img.channels) ch = gray + s * (ch - gray);
  clamp01(img);

  // Hue rotation in YIQ space.
  const Scalar theta = hshift * 2 * std::numbers::pi;
  const Scalar cs = std::cos(theta), sn = std::sin(theta);
  const Plane& r = img.channels[0];
  const Plane& g = img.channels[1];
  const Plane& bl = img.channels[2];
  const Plane y = 0.299 * r + 0.587 * g + 0.114 * bl;
  const Plane i0 = 0.596 * r - 0.274 * g - 0.322 * bl;
  const Plane q0 = 0.211 * r - 0.523 * g + 0.312 * bl;
  const Plane i = cs * i0 - sn * q0;
  const Plane q = sn * i0 + cs * q0;
  img.channels[0] = y + 0.956 * i + 0.621 * q;
  img.channels[1] = y - 0.272 * i - 0.647 * q;
  img.channels[2] = y - 1.106 * i + 1.703 * q;
  clamp01(img);
}

}  // namespace

ViewPair augment_views(const ImageSample& sample, const NclConfig& cfg, std::uint64_t seed) {
  ViewPair out;
  out.base = sample.path;
  for (int m = 0; m < cfg.views; ++m) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(m)));
    Image view = sample.pixels;
    for (Augmentation aug : cfg.augmentations) {
      switch (aug) {
        case Augmentation::random_resized_crop: view = random_resized_crop(view, cfg, rng); break;
        case Augmentation::color_jitter:
          if (bernoulli(rng, cfg.jitter_probability)) color_jitter(view, cfg, rng);
          break;
        case Augmentation::grayscale:
          if (bernoulli(rng, cfg.grayscale_probability)) {
            const Plane gray = luminance(view);
            for (auto& ch : view.channels) ch = gray;
          }
          break;
      }
    }
    out.views.push_back(std::move(view));
  }
  return out;
}

ContrastiveHead::ContrastiveHead(const BackboneSpec& backbone, const NclConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  std::vector<Index> inputs;
  if (cfg.concat_levels) {
    Index total = 0;
    for (int l : cfg.levels) total += backbone.width(l);
    inputs.push_back(total);
  } else {
    for (int l : cfg.levels) inputs.push_back(backbone.width(l));
  }
  groups_ = inputs.size();
  for (Index in : inputs) {
    const Index hidden = cfg.projector_hidden > 0 ? cfg.projector_hidden : in;
    Mlp proj;
    proj.linear = {nn::Linear(in, hidden, rng, false), nn::Linear(hidden, hidden, rng, false),
                   nn::Linear(hidden, cfg.projector_out, rng, false)};
    proj.norm = {nn::BatchNorm1d(hidden, true), nn::BatchNorm1d(hidden, true), nn::BatchNorm1d(cfg.projector_out, false)};
    projector_.push_back(std::move(proj));
    Mlp pred;
    pred.linear = {nn::Linear(cfg.projector_out, cfg.predictor_hidden, rng, false),
                   nn::Linear(cfg.predictor_hidden, cfg.projector_out, rng, true)};
    pred.norm = {nn::BatchNorm1d(cfg.predictor_hidden, true)};
    predictor_.push_back(std::move(pred));
  }
}

ContrastiveHead ContrastiveHead::identity(std::size_t groups) {
  ContrastiveHead head;
  head.groups_ = groups;
  head.identity_ = true;
  return head;
}

ag::Var ContrastiveHead::project(std::size_t group, const ag::Var& pooled) const {
  if (group >= groups_) throw ArgumentError("contrastive head has no group " + std::to_string(group));
  if (identity_) return pooled;
  const Mlp& m = projector_[group];
  ag::Var x = ag::relu(m.norm[0](m.linear[0](pooled)));
  x = ag::relu(m.norm[1](m.linear[1](x)));
  return m.norm[2](m.linear[2](x));
}

ContrastiveHead::Output ContrastiveHead::forward(std::size_t group, const ag::Var& pooled) const {
  ag::Var z = project(group, pooled);
  if (identity_) return {z, z};
  const Mlp& m = predictor_[group];
  ag::Var p = m.linear[1](ag::relu(m.norm[0](m.linear[0](z))));
  return {z, p};
}

nn::ParameterSet ContrastiveHead::projector_parameters() const {
  nn::ParameterSet set;
  for (std::size_t g = 0; g < projector_.size(); ++g)
    for (std::size_t i = 0; i < projector_[g].linear.size(); ++i) {
      const std::string prefix = "proj" + std::to_string(g) + "." + std::to_string(i);
      projector_[g].linear[i].collect(set, prefix + ".fc");
      projector_[g].norm[i].collect(set, prefix + ".bn");
    }
  return set;
}

nn::ParameterSet ContrastiveHead::parameters() const {
  nn::ParameterSet set = projector_parameters();
  for (std::size_t g = 0; g < predictor_.size(); ++g) {
    const std::string prefix = "pred" + std::to_string(g);
    predictor_[g].linear[0].collect(set, prefix + ".0.fc");
    predictor_[g].norm[0].collect(set, prefix + ".0.bn");
    predictor_[g].linear[1].collect(set, prefix + ".1.fc");
  }
  return set;
}

std::vector<ag::Var> head_inputs(const FeaturePyramid& pyramid, const NclConfig& cfg) {
  std::vector<ag::Var> pooled = pooled_views(pyramid, cfg.levels);
  if (!cfg.concat_levels) return pooled;
  return {ag::concat_channels(pooled)};
}

ag::Var cosine_loss(const ag::Var& p, const ag::Var& z) { return ag::negative_cosine(p, ag::detach(z)); }

Scalar cosine_loss(const Eigen::VectorXd& p, const Eigen::VectorXd& z) {
  if (p.size() != z.size()) throw ArgumentError("cosine_loss: dimension mismatch");
  const Shape s{1, p.size(), 1, 1};
  return ag::item(cosine_loss(ag::constant(Tensor(s, p.array())), ag::constant(Tensor(s, z.array()))));
}

ag::Var symmetric_loss(const std::vector<ag::Var>& f1, const std::vector<ag::Var>& f2, const ContrastiveHead& head) {
  if (f1.size() != f2.size() || f1.size() != head.groups())
    throw ArgumentError("symmetric_loss: level sets differ (" + std::to_string(f1.size()) + " vs " +
                        std::to_string(f2.size()) + ", head " + std::to_string(head.groups()) + ")");
  ag::Var total;
  for (std::size_t g = 0; g < f1.size(); ++g) {
    const auto o1 = head.forward(g, f1[g]);
    const auto o2 = head.forward(g, f2[g]);
    ag::Var term = ag::add(ag::scale(cosine_loss(o1.p, o2.z), 0.5), ag::scale(cosine_loss(o2.p, o1.z), 0.5));
    total = total ? ag::add(total, term) : term;
  }
  return ag::scale(total, 1.0 / static_cast<Scalar>(f1.size()));
}

ag::Var multiview_loss(const std::vector<std::vector<ag::Var>>& view_features, const ContrastiveHead& head,
                       const std::vector<std::vector<ag::Var>>* targets) {
  const std::size_t m = view_features.size();
  if (m < 2) throw ArgumentError("multiview_loss: needs at least two views");
  for (const auto& f : view_features)
    if (f.size() != head.groups()) throw ArgumentError("multiview_loss: level set does not match the head");
  if (targets && targets->size() != m) throw ArgumentError("multiview_loss: target count differs from view count");

  ag::Var total;
  for (std::size_t g = 0; g < head.groups(); ++g) {
    std::vector<ContrastiveHead::Output> outs;
    for (const auto& f : view_features) outs.push_back(head.forward(g, f[g]));
    ag::Var sum;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        if (i == j) continue;
        const ag::Var& z = targets ? (*targets)[j][g] : outs[j].z;
        ag::Var d = cosine_loss(outs[i].p, z);
        sum = sum ? ag::add(sum, d) : d;
      }
    ag::Var group = ag::scale(sum, 1.0 / static_cast<Scalar>(m * (m - 1)));
    total = total ? ag::add(total, group) : group;
  }
  return ag::scale(total, 1.0 / static_cast<Scalar>(head.groups()));
}

ag::Var negative_loss(const std::vector<const SyntheticAnomaly*>& synthetic, const Backbone& backbone,
                      const Decoder& frozen_decoder, const FocalParams& params, NegativeLoss kind) {
  if (!frozen_decoder.initialized()) throw StateError("negative_loss: discriminative network is not loaded");
  const nn::ParameterSet decoder_params = frozen_decoder.parameters();
  for (const auto& p : decoder_params.items())
    if (p.var->requires_grad) throw StateError("negative_loss: discriminative network must be frozen");
  if (synthetic.empty()) throw ArgumentError("negative_loss: no synthetic samples");
  std::vector<const Image*> images;
  std::vector<const Mask*> masks;
  for (const auto* s : synthetic) {
    images.push_back(&s->image);
    masks.push_back(&s->mask);
  }
  const ag::Var logits = frozen_decoder.forward(backbone.extract(to_tensor(images)));
  const Tensor target = mask_tensor(masks);
  return kind == NegativeLoss::focal ? focal_loss(logits, target, params) : cross_entropy_loss(logits, target);
}

ag::Var ncl_loss(const ag::Var& sym, const ag::Var& neg, Scalar lambda) {
  if (!(lambda >= 0 && lambda <= 1)) throw ArgumentError("ncl_loss: lambda must lie in [0,1]");
  return ag::add(ag::scale(sym, lambda), ag::scale(neg, 1 - lambda));
}

Scalar ncl_loss(Scalar sym, Scalar neg, Scalar lambda) {
  if (!(lambda >= 0 && lambda <= 1)) throw ArgumentError("ncl_loss: lambda must lie in [0,1]");
  return lambda * sym + (1 - lambda) * neg;
}

std::vector<Stage2EpochLoss> train_stage2(const DatasetSplit& train, const TextureCorpus* corpus,
                                          const GeneratorConfig& gen, const NclConfig& cfg, Backbone& backbone,
                                          ContrastiveHead& head, const Decoder& frozen_decoder,
                                          const Stage2Options& options, std::uint64_t seed,
                                          const std::function<void(const Stage2EpochLoss&)>& on_epoch) {
  cfg.validate();
  gen.validate();
  options.focal.validate();
  if (train.size() < 2) throw ArgumentError("train_stage2: needs at least two training images for batch statistics");
  const bool use_negative = cfg.lambda < 1;
  if (use_negative && !frozen_decoder.initialized()) throw StateError("train_stage2: discriminative network checkpoint missing");
  if (frozen_decoder.initialized()) frozen_decoder.freeze();

  backbone.set_trainable(options.trainable_stages);
  const nn::ParameterSet head_params = head.parameters();
  head_params.set_trainable(true);
  nn::ParameterSet params = backbone.parameters();
  params.append(head_params);
  nn::Sgd optimizer(params, options.lr, options.momentum, options.weight_decay);
  const nn::CosineSchedule schedule{options.lr, options.epochs, 0};

  // Momentum-encoder targets for the byol variant.
  const bool byol = cfg.architecture == ContrastiveArchitecture::byol;
  std::optional<Backbone> target_backbone;
  std::optional<ContrastiveHead> target_head;
  nn::ParameterSet online_ema, target_ema;
  if (byol) {
    target_backbone.emplace(backbone.spec(), 0);
    target_backbone->parameters().copy_values_from(backbone.parameters());
    target_backbone->freeze();
    target_head.emplace(backbone.spec(), cfg, 0);
    target_head->projector_parameters().copy_values_from(head.projector_parameters());
    target_head->parameters().set_trainable(false);
    online_ema = backbone.parameters();
    online_ema.append(head.projector_parameters());
    target_ema = target_backbone->parameters();
    target_ema.append(target_head->projector_parameters());
  }

  std::vector<Stage2EpochLoss> curve;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    optimizer.set_lr(schedule.at(epoch));
    Rng rng(mix_seed(seed, 5, static_cast<std::uint64_t>(epoch)));
    Stage2EpochLoss sums{epoch + 1, 0, 0, 0};
    std::size_t seen = 0;
    for (const auto& batch : make_batches(train.size(), options.batch_size, rng)) {
      std::vector<ViewPair> views;
      std::vector<SyntheticAnomaly> synth;
      for (std::size_t i : batch) {
        views.push_back(augment_views(train.samples[i], cfg, mix_seed(seed, 3, static_cast<std::uint64_t>(epoch), i)));
        if (use_negative) {
          const ImageSample partner = pick_partner(train, corpus, gen, i, rng);
          synth.push_back(synthesize(train.samples[i], partner, gen, mix_seed(seed, 4, static_cast<std::uint64_t>(epoch), i)));
        }
      }

      std::vector<std::vector<ag::Var>> view_features, view_targets;
      for (int m = 0; m < cfg.views; ++m) {
        std::vector<const Image*> batch_views;
        for (const auto& v : views) batch_views.push_back(&v.views[static_cast<std::size_t>(m)]);
        const Tensor input = to_tensor(batch_views);
        view_features.push_back(head_inputs(backbone.extract(input), cfg));
        if (byol) {
          std::vector<ag::Var> targets;
          const auto pooled = head_inputs(target_backbone->extract(input), cfg);
          for (std::size_t g = 0; g < pooled.size(); ++g) targets.push_back(ag::detach(target_head->project(g, pooled[g])));
          view_targets.push_back(std::move(targets));
        }
      }
      const ag::Var sym = multiview_loss(view_features, head, byol ? &view_targets : nullptr);

      ag::Var neg = ag::constant(Tensor(Shape{1, 1, 1, 1}));
      if (use_negative) {
        std::vector<const SyntheticAnomaly*> ptrs;
        for (const auto& s : synth) ptrs.push_back(&s);
        neg = negative_loss(ptrs, backbone, frozen_decoder, options.focal, cfg.neg_loss);
      }
      const ag::Var total = ncl_loss(sym, neg, cfg.lambda);

      params.zero_grad();
      ag::backward(total);
      optimizer.step();

      if (byol) {
        for (std::size_t k = 0; k < target_ema.size(); ++k) {
          auto& t = target_ema.items()[k].var->value.data();
          t = cfg.byol_momentum * t + (1 - cfg.byol_momentum) * online_ema.items()[k].var->value.data();
        }
      }

      const auto n = static_cast<Scalar>(batch.size());
      sums.sym += ag::item(sym) * n;
      sums.neg += ag::item(neg) * n;
      sums.ncl += ag::item(total) * n;
      seen += batch.size();
    }
    const auto count = static_cast<Scalar>(seen);
    curve.push_back({epoch + 1, sums.sym / count, sums.neg / count, sums.ncl / count});
    if (on_epoch) on_epoch(curve.back());
  }
  return curve;
}

}  // namespace tocoad
