#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gaitveil/objective.hpp"

using namespace gaitveil;

namespace {

SilhouetteSequence seeded_soft_sequence(std::uint64_t seed, std::size_t L = 2,
                                        std::size_t H = 4, std::size_t W = 4) {
  SplitMix64 rng(seed);
  SilhouetteSequence s(L, H, W);
  for (double& v : s.data) v = 0.05 + 0.9 * rng.next_unit();
  return s;
}

}  // namespace

TEST_CASE("cosine hits its documented anchor values") {
  Tensor e = Tensor::vector({1.0, 0.0, 0.0});
  Tensor o = Tensor::vector({0.0, 1.0, 0.0});
  Tensor neg = Tensor::vector({-1.0, 0.0, 0.0});
  REQUIRE(cosine(e, e) == 1.0);
  REQUIRE(cosine(e, o) == 0.0);
  REQUIRE(cosine(e, neg) == -1.0);
}

TEST_CASE("cosine stays inside the unit interval under rounding pressure") {
  SplitMix64 rng(71);
  for (int k = 0; k < 200; ++k) {
    Tensor a = Tensor::zeros({8}), b = Tensor::zeros({8});
    double na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      a[i] = rng.next_symmetric(1.0);
      b[i] = rng.next_symmetric(1.0);
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    for (std::size_t i = 0; i < 8; ++i) {
      a[i] /= std::sqrt(na);
      b[i] /= std::sqrt(nb);
    }
    double c = cosine(a, b);
    REQUIRE(c >= -1.0);
    REQUIRE(c <= 1.0);
    REQUIRE(cosine(a, a) <= 1.0);
  }
  REQUIRE_THROWS_AS(cosine(Tensor::vector({1.0}), Tensor::vector({1.0, 0.0})), ShapeError);
}

TEST_CASE("pull-to-target loss vanishes when protected equals target") {
  MomentGeometry geo(2, 4, 4);
  MomentEmbedder e0(geo, 8, 1), e1(geo, 8, 2);
  EmbedderEnsemble ens{&e0, &e1};
  SilhouetteSequence x = seeded_soft_sequence(5);
  REQUIRE(loss_imp(x, x, ens) < 1e-9);
  REQUIRE(loss_imp(x, x, ens) >= 0.0);
}

TEST_CASE("repel-source loss is one when protected equals source") {
  MomentGeometry geo(2, 4, 4);
  MomentEmbedder e0(geo, 8, 1);
  EmbedderEnsemble ens{&e0};
  SilhouetteSequence x = seeded_soft_sequence(6);
  REQUIRE(loss_obf(x, x, ens) == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("loss terms respect their documented ranges") {
  MomentGeometry geo(2, 4, 4);
  MomentEmbedder e0(geo, 8, 3), e1(geo, 8, 4);
  EmbedderEnsemble ens{&e0, &e1};
  SplitMix64 rng(81);
  for (int k = 0; k < 20; ++k) {
    SilhouetteSequence a = seeded_soft_sequence(rng.next_u64());
    SilhouetteSequence b = seeded_soft_sequence(rng.next_u64());
    double imp = loss_imp(a, b, ens);
    double obf = loss_obf(a, b, ens);
    REQUIRE(imp >= 0.0);
    REQUIRE(imp <= 2.0);
    REQUIRE(obf >= -1.0);
    REQUIRE(obf <= 1.0);
  }
}

TEST_CASE("duplicated embedders average to the single-embedder loss exactly") {
  MomentGeometry geo(2, 4, 4);
  MomentEmbedder e0(geo, 8, 9);
  EmbedderEnsemble one{&e0};
  EmbedderEnsemble twice{&e0, &e0};
  SilhouetteSequence a = seeded_soft_sequence(10);
  SilhouetteSequence b = seeded_soft_sequence(11);
  REQUIRE(loss_imp(a, b, one) == loss_imp(a, b, twice));
  REQUIRE(loss_obf(a, b, one) == loss_obf(a, b, twice));
}

TEST_CASE("weighted total decomposes exactly") {
  MomentGeometry geo(2, 4, 4);
  MomentEmbedder e0(geo, 8, 12), e1(geo, 8, 13);
  EmbedderEnsemble ens{&e0, &e1};
  SilhouetteSequence pro = seeded_soft_sequence(20);
  SilhouetteSequence src = seeded_soft_sequence(21);
  SilhouetteSequence tar = seeded_soft_sequence(22);
  LossWeights w;
  LossRecord rec = loss_total(pro, src, tar, w, ens);
  REQUIRE(std::abs(rec.total - (w.lambda_imp * rec.imp + w.lambda_obf * rec.obf)) < 1e-12);
  REQUIRE(rec.cos_src.size() == 2);
  REQUIRE(rec.cos_tar.size() == 2);
  REQUIRE(rec.imp == Catch::Approx(loss_imp(pro, tar, ens)).margin(1e-15));
  REQUIRE(rec.obf == Catch::Approx(loss_obf(pro, src, ens)).margin(1e-15));
}

TEST_CASE("zeroing a weight removes its term exactly") {
  MomentGeometry geo(2, 4, 4);
  MomentEmbedder e0(geo, 8, 14);
  EmbedderEnsemble ens{&e0};
  SilhouetteSequence pro = seeded_soft_sequence(30);
  SilhouetteSequence src = seeded_soft_sequence(31);
  SilhouetteSequence tar = seeded_soft_sequence(32);

  LossWeights no_obf;
  no_obf.lambda_obf = 0.0;
  LossRecord r1 = loss_total(pro, src, tar, no_obf, ens);
  REQUIRE(r1.total == no_obf.lambda_imp * r1.imp);

  LossWeights no_imp;
  no_imp.lambda_imp = 0.0;
  LossRecord r2 = loss_total(pro, src, tar, no_imp, ens);
  REQUIRE(r2.total == no_imp.lambda_obf * r2.obf);
}

TEST_CASE("protected equal to target leaves only the weighted source term") {
  MomentGeometry geo(2, 4, 4);
  MomentEmbedder e0(geo, 8, 15);
  EmbedderEnsemble ens{&e0};
  SilhouetteSequence src = seeded_soft_sequence(41);
  SilhouetteSequence tar = seeded_soft_sequence(42);
  LossWeights w;  // defaults 1.5 / 0.1
  LossRecord rec = loss_total(tar, src, tar, w, ens);
  double expected = 0.1 * cosine(e0.embed(tar), e0.embed(src));
  REQUIRE_THAT(rec.total, Catch::Matchers::WithinAbs(expected, 1e-9));
}

TEST_CASE("weight validation and range warnings") {
  LossWeights bad;
  bad.lambda_imp = -0.5;
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.lambda_imp = std::nan("");
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);

  LossWeights defaults;
  REQUIRE(defaults.range_warning().empty());
  LossWeights hot;
  hot.lambda_imp = 5.0;
  hot.lambda_obf = 0.9;
  REQUIRE_NOTHROW(hot.validate());
  REQUIRE_FALSE(hot.range_warning().empty());
}

TEST_CASE("tape objective agrees with the plain evaluation") {
  MomentGeometry geo(2, 4, 4);
  MomentEmbedder e0(geo, 8, 16), e1(geo, 8, 17);
  EmbedderEnsemble ens{&e0, &e1};
  SilhouetteSequence pro = seeded_soft_sequence(50);
  SilhouetteSequence src = seeded_soft_sequence(51);
  SilhouetteSequence tar = seeded_soft_sequence(52);
  LossWeights w;

  std::vector<Tensor> e_src{e0.embed(src), e1.embed(src)};
  std::vector<Tensor> e_tar{e0.embed(tar), e1.embed(tar)};

  Tape tape;
  NodeId x = tape.leaf(Tensor({32}, pro.data));
  ObjectiveGraph g = build_objective(tape, x, e_src, e_tar, ens, w);
  LossRecord from_tape = record_from_graph(tape, g, 7);
  LossRecord plain = loss_total(pro, src, tar, w, ens);

  REQUIRE(from_tape.iteration == 7);
  REQUIRE_THAT(from_tape.imp, Catch::Matchers::WithinAbs(plain.imp, 1e-12));
  REQUIRE_THAT(from_tape.obf, Catch::Matchers::WithinAbs(plain.obf, 1e-12));
  REQUIRE_THAT(from_tape.total, Catch::Matchers::WithinAbs(plain.total, 1e-12));
  for (std::size_t k = 0; k < 2; ++k) {
    REQUIRE_THAT(from_tape.cos_src[k], Catch::Matchers::WithinAbs(plain.cos_src[k], 1e-12));
    REQUIRE_THAT(from_tape.cos_tar[k], Catch::Matchers::WithinAbs(plain.cos_tar[k], 1e-12));
  }
}

TEST_CASE("objective gradient with respect to the clip matches finite differences") {
  MomentGeometry geo(2, 4, 4);
  MomentEmbedder e0(geo, 8, 18), e1(geo, 8, 19);
  EmbedderEnsemble ens{&e0, &e1};
  SilhouetteSequence pro = seeded_soft_sequence(60);
  SilhouetteSequence src = seeded_soft_sequence(61);
  SilhouetteSequence tar = seeded_soft_sequence(62);
  LossWeights w;
  std::vector<Tensor> e_src{e0.embed(src), e1.embed(src)};
  std::vector<Tensor> e_tar{e0.embed(tar), e1.embed(tar)};

  auto f = [&](const Tensor& x) {
    Tape t;
    ObjectiveGraph g = build_objective(t, t.leaf(x), e_src, e_tar, ens, w);
    return t.value(g.total).item();
  };

  Tensor x0({32}, pro.data);
  Tape tape;
  NodeId xn = tape.leaf(x0, true);
  ObjectiveGraph g = build_objective(tape, xn, e_src, e_tar, ens, w);
  GradientMap grads = tape.backward(g.total);

  double h = 1e-6;
  for (std::size_t i = 0; i < 32; ++i) {
    Tensor xp = x0, xm = x0;
    xp[i] += h;
    xm[i] -= h;
    double fd = (f(xp) - f(xm)) / (2.0 * h);
    REQUIRE_THAT(grads.at(xn)[i], Catch::Matchers::WithinRel(fd, 1e-4) ||
                                      Catch::Matchers::WithinAbs(fd, 1e-10));
  }
}

TEST_CASE("objective rejects malformed ensembles") {
  MomentGeometry geo(2, 4, 4);
  MomentEmbedder e0(geo, 8, 23);
  SilhouetteSequence a = seeded_soft_sequence(70);
  REQUIRE_THROWS_AS(loss_imp(a, a, {}), std::invalid_argument);
  EmbedderEnsemble with_null{&e0, nullptr};
  REQUIRE_THROWS_AS(loss_imp(a, a, with_null), std::invalid_argument);

  Tape tape;
  NodeId x = tape.leaf(Tensor({32}, a.data));
  std::vector<Tensor> one_emb{e0.embed(a)};
  std::vector<Tensor> two_emb{e0.embed(a), e0.embed(a)};
  EmbedderEnsemble ens{&e0};
  REQUIRE_THROWS_AS(build_objective(tape, x, two_emb, one_emb, ens, LossWeights{}),
                    std::invalid_argument);
}
