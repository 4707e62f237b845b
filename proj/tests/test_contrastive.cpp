#include "support.hpp"

#include "tocoad/config.hpp"
#include "tocoad/contrastive.hpp"
#include "tocoad/fixture.hpp"

#include <doctest.h>

using namespace testing;

namespace {

// -(p . z) / (|p| |z|), averaged over rows, straight from the values.
Scalar neg_cos_rows(const Tensor& p, const Tensor& z) {
  Scalar sum = 0;
  for (Index r = 0; r < p.shape().n; ++r) {
    Scalar dot = 0, pp = 0, zz = 0;
    for (Index k = 0; k < p.shape().c; ++k) {
      const Scalar a = p.at(r, k, 0, 0), b = z.at(r, k, 0, 0);
      dot += a * b;
      pp += a * a;
      zz += b * b;
    }
    sum -= dot / std::sqrt(pp * zz);
  }
  return sum / static_cast<Scalar>(p.shape().n);
}

NclConfig small_ncl() {
  NclConfig cfg;
  cfg.projector_out = 16;
  cfg.predictor_hidden = 32;
  return cfg;
}

// Pooled level-3 and level-4 features of one view (batch of 4).
std::vector<ag::Var> random_view(Rng& rng, bool trainable = false) {
  return {ag::parameter(random_tensor({4, 64, 1, 1}, rng), trainable),
          ag::parameter(random_tensor({4, 128, 1, 1}, rng), trainable)};
}

ImageSample sample_of(const Image& img, int label = 0) {
  ImageSample s;
  s.pixels = img;
  s.label = label;
  s.path = "x";
  return s;
}

struct Desk {
  RunConfig cfg = RunConfig::load(source_dir() / "configs" / "desk.ini");
  DatasetSplit train;
  TextureCorpus textures;

  Desk() {
    cfg.dataset_root = source_dir() / cfg.dataset_root;
    cfg.texture_dir = source_dir() / cfg.texture_dir;
    train = preprocess(load_category(cfg.dataset_root, "dots", SplitKind::train), cfg.resize, cfg.crop);
    textures = load_texture_corpus(cfg.texture_dir);
  }
};

}  // namespace

TEST_CASE("cosine loss trivial values") {
  const Eigen::Vector3d p(0.3, -1.2, 2.0);
  const Eigen::Vector3d ortho = Eigen::Vector3d(1.2, 0.3, 0).normalized() * 5;
  CHECK(std::abs(cosine_loss(p, p) - -1.0) < 1e-7);
  CHECK(std::abs(cosine_loss(p, ortho)) < 1e-7);
  CHECK(std::abs(cosine_loss(p, Eigen::Vector3d(-p)) - 1.0) < 1e-7);
  CHECK(std::abs(cosine_loss(p, Eigen::Vector3d(3.5 * p)) - -1.0) < 1e-7);
  CHECK_THROWS_AS(cosine_loss(p, Eigen::Vector3d::Zero()), NumericError);
  CHECK_THROWS_AS(cosine_loss(p, Eigen::Vector2d(1, 1)), ArgumentError);
}

TEST_CASE("symmetric loss through the identity head") {
  Rng rng(1);
  const auto f = random_view(rng);
  const auto g = random_view(rng);
  const ContrastiveHead id = ContrastiveHead::identity(2);
  CHECK(ag::item(symmetric_loss(f, f, id)) == doctest::Approx(-1).epsilon(1e-12));
  CHECK(ag::item(symmetric_loss(f, g, id)) == ag::item(symmetric_loss(g, f, id)));
  CHECK_THROWS_AS(symmetric_loss(f, {f[0]}, id), ArgumentError);
}

TEST_CASE("symmetric loss equals the unrolled half-sum with constant targets") {
  Rng rng(2);
  const ContrastiveHead head(BackboneSpec{}, small_ncl(), 5);
  const auto f1 = random_view(rng), f2 = random_view(rng);
  Scalar expected = 0;
  for (std::size_t g = 0; g < 2; ++g) {
    const auto o1 = head.forward(g, f1[g]), o2 = head.forward(g, f2[g]);
    expected += 0.5 * neg_cos_rows(o1.p->value, o2.z->value) + 0.5 * neg_cos_rows(o2.p->value, o1.z->value);
  }
  expected /= 2;
  const Scalar got = ag::item(symmetric_loss(f1, f2, head));
  CHECK(std::abs(got - expected) < 1e-6);
  CHECK(ag::item(symmetric_loss(f2, f1, head)) == doctest::Approx(got).epsilon(1e-12));
}

TEST_CASE("multiview loss for three views equals the explicit six-term enumeration") {
  Rng rng(3);
  const ContrastiveHead head(BackboneSpec{}, small_ncl(), 6);
  const std::vector<std::vector<ag::Var>> views{random_view(rng), random_view(rng), random_view(rng)};
  Scalar expected = 0;
  for (std::size_t g = 0; g < 2; ++g) {
    std::vector<ContrastiveHead::Output> out;
    for (const auto& v : views) out.push_back(head.forward(g, v[g]));
    Scalar six = 0;
    six += 0.5 * neg_cos_rows(out[0].p->value, out[1].z->value);
    six += 0.5 * neg_cos_rows(out[1].p->value, out[0].z->value);
    six += 0.5 * neg_cos_rows(out[0].p->value, out[2].z->value);
    six += 0.5 * neg_cos_rows(out[2].p->value, out[0].z->value);
    six += 0.5 * neg_cos_rows(out[1].p->value, out[2].z->value);
    six += 0.5 * neg_cos_rows(out[2].p->value, out[1].z->value);
    expected += six * 2.0 / 6.0;
  }
  expected /= 2;
  CHECK(std::abs(ag::item(multiview_loss(views, head)) - expected) < 1e-6);

  const ContrastiveHead id = ContrastiveHead::identity(2);
  CHECK(ag::item(multiview_loss({views[0], views[0], views[0]}, id)) == doctest::Approx(-1).epsilon(1e-12));
  CHECK(ag::item(multiview_loss({views[0], views[1]}, head)) ==
        doctest::Approx(ag::item(symmetric_loss(views[0], views[1], head))).epsilon(1e-14));
  CHECK_THROWS_AS(multiview_loss({views[0]}, head), ArgumentError);
  CHECK_THROWS_AS(multiview_loss({views[0], {views[1][0]}}, head), ArgumentError);
}

TEST_CASE("ncl loss affine identities") {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const Scalar sym = uniform(rng, -1, 1), neg = uniform(rng, 0, 3);
    CHECK(ncl_loss(sym, neg, 1.0) == sym);
    CHECK(ncl_loss(sym, neg, 0.0) == neg);
    CHECK(ncl_loss(sym, neg, 0.5) == (sym + neg) / 2);
    const auto s = ag::constant(Tensor({1, 1, 1, 1}, sym)), n = ag::constant(Tensor({1, 1, 1, 1}, neg));
    CHECK(ag::item(ncl_loss(s, n, 1.0)) == sym);
    CHECK(ag::item(ncl_loss(s, n, 0.0)) == neg);
    CHECK(ag::item(ncl_loss(s, n, 0.5)) == (sym + neg) / 2);
    const Scalar l = uniform(rng, 0, 1);
    CHECK(ncl_loss(sym, neg, l) == doctest::Approx(l * sym + (1 - l) * neg).epsilon(1e-15));
  }
  CHECK_THROWS_AS(ncl_loss(0.0, 0.0, 1.5), ArgumentError);
}

TEST_CASE("stop-gradient: the projector target path contributes nothing") {
  Rng rng(5);
  const ContrastiveHead head(BackboneSpec{}, small_ncl(), 7);
  const nn::ParameterSet params = head.parameters();
  const auto f1 = random_view(rng, true), f2 = random_view(rng, true);
  std::vector<ag::Var> inputs = f1;
  inputs.insert(inputs.end(), f2.begin(), f2.end());
  std::vector<ag::Var> watched = inputs;
  for (const auto& p : params.items()) watched.push_back(p.var);
  auto grads = [&] {
    std::vector<Eigen::ArrayXd> out;
    for (const auto& v : watched) out.push_back(v->grad.empty() ? Eigen::ArrayXd::Zero(v->value.size()) : v->grad.data());
    for (const auto& v : watched) v->grad = Tensor();
    return out;
  };

  // Library graph.
  for (const auto& v : watched) v->grad = Tensor();
  ag::backward(symmetric_loss(f1, f2, head));
  const auto library = grads();

  // Reference graph: z replaced by constant copies of its value.
  ag::Var ref;
  for (std::size_t g = 0; g < 2; ++g) {
    const auto o1 = head.forward(g, f1[g]), o2 = head.forward(g, f2[g]);
    const ag::Var term = ag::add(ag::scale(ag::negative_cosine(o1.p, ag::constant(o2.z->value)), 0.5),
                                 ag::scale(ag::negative_cosine(o2.p, ag::constant(o1.z->value)), 0.5));
    ref = ref ? ag::add(ref, term) : term;
  }
  ag::backward(ag::scale(ref, 0.5));
  const auto reference = grads();
  for (std::size_t i = 0; i < library.size(); ++i) CHECK((library[i] - reference[i]).abs().maxCoeff() < 1e-12);

  // Target path alone: p frozen as constants, z live.
  ag::Var target_only;
  for (std::size_t g = 0; g < 2; ++g) {
    const auto o1 = head.forward(g, f1[g]), o2 = head.forward(g, f2[g]);
    const ag::Var term = ag::add(cosine_loss(ag::constant(o1.p->value), o2.z), cosine_loss(ag::constant(o2.p->value), o1.z));
    target_only = target_only ? ag::add(target_only, term) : term;
  }
  ag::backward(target_only);
  for (const auto& g : grads()) CHECK((g == 0).all());
}

TEST_CASE("view augmentation") {
  const ImageSample s = sample_of(render_pattern("dots", 64, 1));
  NclConfig cfg;
  const ViewPair a = augment_views(s, cfg, 9), b = augment_views(s, cfg, 9);
  REQUIRE(a.views.size() == 2);
  for (std::size_t m = 0; m < 2; ++m)
    for (std::size_t c = 0; c < 3; ++c) CHECK((a.views[m].channels[c] == b.views[m].channels[c]).all());
  CHECK((a.views[0].channels[0] != a.views[1].channels[0]).any());
  CHECK(a.views[0].height() == 64);

  cfg.augmentations.clear();
  cfg.views = 3;
  const ViewPair id = augment_views(s, cfg, 9);
  REQUIRE(id.views.size() == 3);
  for (const auto& v : id.views) CHECK((v.channels[1] == s.pixels.channels[1]).all());
}

TEST_CASE("negative loss gradient matches central differences on the desk backbone") {
  const BackboneSpec spec;
  const Backbone bb(spec, 21);
  const Decoder dec(spec, 22);
  dec.freeze();
  bb.set_trainable({0, 1, 2, 3, 4});
  GeneratorConfig gen;
  std::vector<SyntheticAnomaly> synth;
  for (std::uint64_t i = 0; i < 2; ++i)
    synth.push_back(synthesize_perlin(sample_of(render_pattern("stripes", 64, i)), render_pattern("dots", 64, 50 + i), gen, i));
  const std::vector<const SyntheticAnomaly*> ptrs{&synth[0], &synth[1]};
  const FocalParams focal;

  const nn::ParameterSet params = bb.parameters();
  params.zero_grad();
  ag::backward(negative_loss(ptrs, bb, dec, focal));
  const auto value = [&] { return ag::item(negative_loss(ptrs, bb, dec, focal)); };

  int checked = 0;
  for (const auto& p : params.items()) {
    if (p.name.find("weight") == std::string::npos) continue;
    Index at = 0;
    const Scalar analytic = p.var->grad.data().abs().maxCoeff(&at) * (p.var->grad.data()[at] < 0 ? -1 : 1);
    const Scalar numeric = numeric_partial(value, p.var, at, 1e-3);
    INFO(p.name << "[" << at << "] analytic " << analytic << " numeric " << numeric);
    CHECK(relative_error(analytic, numeric) < 1e-2);
    ++checked;
  }
  CHECK(checked == 9);

  Decoder live(spec, 23);
  CHECK_THROWS_AS(negative_loss(ptrs, bb, live, focal), StateError);
  CHECK_THROWS_AS(negative_loss(ptrs, bb, Decoder(), focal), StateError);
  CHECK_THROWS_AS(negative_loss({}, bb, dec, focal), ArgumentError);
}

TEST_CASE("cross-entropy variant of the negative loss") {
  const BackboneSpec spec;
  const Backbone bb(spec, 1);
  const Decoder dec(spec, 2);
  dec.freeze();
  const SyntheticAnomaly s = synthesize_perlin(sample_of(render_pattern("dots", 64, 3)), render_pattern("stripes", 64, 4), {}, 0);
  const ag::Var logits = dec.forward(bb.extract(to_tensor(s.image)));
  const Scalar ce = ag::item(cross_entropy_loss(logits, mask_tensor({&s.mask})));
  CHECK(ag::item(negative_loss({&s}, bb, dec, FocalParams{}, NegativeLoss::cross_entropy)) == ce);
}

TEST_CASE("stage II with zero epochs leaves the extractor unchanged") {
  Desk desk;
  Backbone bb(desk.cfg.backbone, 0);
  ContrastiveHead head(desk.cfg.backbone, desk.cfg.ncl, 1);
  const Decoder dec(desk.cfg.backbone, 2);
  const auto before = bb.parameters().checksum();
  Stage2Options opts = desk.cfg.stage2;
  opts.epochs = 0;
  CHECK(train_stage2(desk.train, &desk.textures, desk.cfg.generator, desk.cfg.ncl, bb, head, dec, opts, 0).empty());
  CHECK(bb.parameters().checksum() == before);
  CHECK_THROWS_AS(train_stage2(desk.train, &desk.textures, desk.cfg.generator, desk.cfg.ncl, bb, head, Decoder(), opts, 0),
                  StateError);
}

TEST_CASE("stage II on the desk fixture: finite losses, no collapse, frozen decoder") {
  Desk desk;
  Backbone bb(desk.cfg.backbone, 0);
  Decoder dec(desk.cfg.backbone, 1);
  Stage1Options s1 = desk.cfg.stage1;
  s1.epochs = 2;
  train_stage1(desk.train, &desk.textures, desk.cfg.generator, bb, dec, s1, 0);

  ContrastiveHead head(desk.cfg.backbone, desk.cfg.ncl, 2);
  const auto decoder_before = dec.parameters().checksum();
  const auto backbone_before = bb.parameters().checksum();
  const auto curve = train_stage2(desk.train, &desk.textures, desk.cfg.generator, desk.cfg.ncl, bb, head, dec,
                                  desk.cfg.stage2, 0);
  REQUIRE(curve.size() == static_cast<std::size_t>(desk.cfg.stage2.epochs));
  for (const auto& e : curve) {
    MESSAGE("epoch " << e.epoch << " sym " << e.sym << " neg " << e.neg << " ncl " << e.ncl);
    CHECK(std::isfinite(e.sym));
    CHECK(std::isfinite(e.neg));
    CHECK(e.sym > -1 + 1e-4);
    CHECK(e.ncl == doctest::Approx(0.5 * e.sym + 0.5 * e.neg).epsilon(1e-9));
  }
  CHECK(dec.parameters().checksum() == decoder_before);
  CHECK(bb.parameters().checksum() != backbone_before);
}

TEST_CASE("byol variant trains with momentum targets") {
  Desk desk;
  desk.train.samples.resize(8);
  NclConfig ncl = desk.cfg.ncl;
  ncl.architecture = ContrastiveArchitecture::byol;
  ncl.lambda = 1;
  Backbone bb(desk.cfg.backbone, 0);
  ContrastiveHead head(desk.cfg.backbone, ncl, 1);
  Stage2Options opts = desk.cfg.stage2;
  opts.epochs = 1;
  const auto curve = train_stage2(desk.train, nullptr, desk.cfg.generator, ncl, bb, head, Decoder(), opts, 0);
  REQUIRE(curve.size() == 1);
  CHECK(std::isfinite(curve[0].sym));
  CHECK(curve[0].neg == 0);
}
