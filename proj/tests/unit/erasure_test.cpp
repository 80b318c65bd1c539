#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include <Eigen/SVD>

#include "casceq/erasure.hpp"
#include "casceq/error.hpp"
#include "casceq/rng.hpp"
#include "casceq/text.hpp"
#include "toy_model.hpp"

using namespace casceq;
namespace toy = casceq::testing;

namespace {

MatrixD gaussian(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  MatrixD m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

ConceptMatrix custom(MatrixD z) {
  ConceptMatrix c;
  c.z = std::move(z);
  return c;
}

double mean_sq_change(const Eraser& e, const MatrixD& x) {
  return (x - apply_eraser(e, x)).rowwise().squaredNorm().mean();
}

Eigen::Vector2d v35() { return {3.0, 5.0}; }

}  // namespace

TEST(FitLeace, AxisAlignedFirstCoordinate) {
  // The four sign patterns give mean 0 and covariance exactly I.
  MatrixD x(4, 2);
  x << 1, 1, 1, -1, -1, 1, -1, -1;
  const auto e = fit_leace(x, custom(x.col(0)), 0.0);
  const Eigen::Vector2d r = e.projection * v35();
  EXPECT_NEAR(r(0), 0.0, 1e-12);
  EXPECT_NEAR(r(1), 5.0, 1e-12);
}

TEST(FitLeace, IndependentConceptBarelyMovesData) {
  const Eigen::Index d = 20, k = 1;
  const MatrixD x = gaussian(500, d, 1);
  const MatrixD z = gaussian(500, k, 2);
  const auto e = fit_leace(x, custom(z));
  const double rel = mean_sq_change(e, x) / x.rowwise().squaredNorm().mean();
  EXPECT_LE(rel, 2.0 * static_cast<double>(k) / static_cast<double>(d));

  const MatrixD xh = gaussian(500, d, 3), zh = gaussian(500, k, 4);
  const auto g = verify_guardedness(e, xh, custom(zh));
  EXPECT_LE(std::abs(g.post_score - g.pre_score), 0.02);
}

TEST(FitLeace, CopiedCoordinateIsTheErasedFunctional) {
  // Correlated features: the erased functional is still e_j exactly.
  const Eigen::Index d = 6, j = 2;
  MatrixD mix = gaussian(d, d, 5) * 0.3 + MatrixD::Identity(d, d);
  const MatrixD x = gaussian(1000, d, 6) * mix;
  const auto e = fit_leace(x, custom(x.col(j)));
  const MatrixD removed = MatrixD::Identity(d, d) - e.projection;
  Eigen::JacobiSVD<MatrixD> svd(removed, Eigen::ComputeFullV);
  EXPECT_GE(std::abs(svd.matrixV()(j, 0)), 0.999);
  // And r(x)_j carries no variance.
  const VectorD rj = apply_eraser(e, x).col(j);
  EXPECT_LT((rj.array() - rj.mean()).square().mean(), 1e-6);
}

TEST(FitLeace, CovarianceAnnihilatedOnFitData) {
  const MatrixD x = gaussian(400, 10, 7);
  const MatrixD z = x.leftCols(3) * gaussian(3, 3, 8) + 0.2 * gaussian(400, 3, 9);
  const auto e = fit_leace(x, custom(z));
  const double base = cross_covariance(x, z).norm();
  EXPECT_LE(cross_covariance(apply_eraser(e, x), z).norm(), 1e-6 * base);
  EXPECT_LE(idempotence_error(e), 1e-5);
  EXPECT_LE(erased_rank(e), 3);
}

TEST(FitLeace, Errors) {
  MatrixD x = gaussian(50, 3, 1);
  EXPECT_THROW(fit_leace(x, custom(gaussian(50, 3, 2))), InputError);
  x.col(2) = x.col(1);
  EXPECT_THROW(fit_leace(x, custom(gaussian(50, 1, 3)), 0.0), NumericalError);
  EXPECT_THROW(fit_leace(x, custom(gaussian(49, 1, 3))), InputError);
}

TEST(ApplyEraser, IdempotentAndZeroPreserving) {
  const MatrixD x = gaussian(300, 8, 11);
  const auto e = fit_leace(x, custom(x.leftCols(2)));
  const MatrixD once = apply_eraser(e, x);
  const MatrixD twice = apply_eraser(e, once);
  EXPECT_LE((twice - once).norm(), 1e-5 * once.norm());
  EXPECT_EQ(apply_eraser(e, MatrixD(MatrixD::Zero(1, 8))), MatrixD::Zero(1, 8));
  EXPECT_THROW(apply_eraser(e, MatrixD(MatrixD::Zero(1, 7))), InputError);
}

TEST(ApplyEraser, FloatRowsMatchDouble) {
  const auto e = random_eraser(6, 2, 3);
  const MatrixF x = gaussian(5, 6, 4).cast<float>();
  const MatrixD expect = apply_eraser(e, MatrixD(x.cast<double>()));
  EXPECT_LT((apply_eraser(e, x).cast<double>() - expect).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(RandomEraser, AxisBasis) {
  MatrixD q(2, 1);
  q << 1, 0;
  const Eigen::Vector2d r = eraser_from_basis(q).projection * v35();
  EXPECT_NEAR(r(0), 0.0, 1e-15);
  EXPECT_NEAR(r(1), 5.0, 1e-15);
}

TEST(RandomEraser, RankAndDeterminism) {
  for (Eigen::Index k : {1, 5, 12}) {
    const auto a = random_eraser(16, k, 42);
    EXPECT_EQ(erased_rank(a), k);
    EXPECT_LE(idempotence_error(a), 1e-12);
    EXPECT_EQ(a.projection, random_eraser(16, k, 42).projection);
  }
  EXPECT_NE(random_eraser(16, 3, 1).projection, random_eraser(16, 3, 2).projection);
  EXPECT_THROW(random_eraser(4, 4, 0), InputError);
}

TEST(Guardedness, LinearConceptErased) {
  // A rank-2 latent spread over all 12 coordinates: the LEACE eraser removes
  // it, while a random 2-dim erasure leaves it recoverable from the rest.
  const MatrixD latent = gaussian(1000, 2, 21);
  const MatrixD x = latent * gaussian(2, 12, 22) + 0.1 * gaussian(1000, 12, 23);
  const MatrixD z = latent * gaussian(2, 2, 24);
  const auto e = fit_leace(x.topRows(600), custom(z.topRows(600)));
  const auto g = verify_guardedness(e, x.bottomRows(400), custom(z.bottomRows(400)));
  EXPECT_GE(g.pre_score, 0.99);
  EXPECT_LE(g.post_score, 0.01);
  const auto ctrl = verify_guardedness(random_eraser(12, 2, 5), x.bottomRows(400), custom(z.bottomRows(400)));
  EXPECT_LE(std::abs(ctrl.post_score - ctrl.pre_score), 0.05);
}

TEST(Guardedness, NoiseConceptNothingToErase) {
  const MatrixD x = gaussian(600, 8, 31);
  const MatrixD z = gaussian(600, 1, 32);
  const auto g = verify_guardedness(fit_leace(x, custom(z)), x, custom(z));
  EXPECT_NEAR(g.pre_score, 0.0, 0.05);
  EXPECT_NEAR(g.post_score, 0.0, 0.05);
}

TEST(LeastChange, FittedBeatsEqualRankRandomErasers) {
  // The concept coordinate has variance 0.49 against 1 elsewhere, so any
  // other rank-1 erasure moves more mass, and in d = 32 a random direction
  // rarely overlaps the concept enough to hide it.
  const Eigen::Index d = 32;
  MatrixD x = gaussian(2000, d, 41);
  x.col(0) *= 0.7;
  const MatrixD z = x.col(0) * 3.0;
  const MatrixD xh = x.bottomRows(500), zh = z.bottomRows(500);
  const auto fitted = fit_leace(x.topRows(1500), custom(z.topRows(1500)));
  const double fitted_change = mean_sq_change(fitted, xh);
  EXPECT_LE(verify_guardedness(fitted, xh, custom(zh)).post_score, 0.01);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto r = random_eraser(d, 1, s);
    EXPECT_LT(fitted_change, mean_sq_change(r, xh)) << "seed " << s;
    EXPECT_GT(verify_guardedness(r, xh, custom(zh)).post_score, 0.01) << "seed " << s;
  }
}

TEST(Concepts, BocRowsFollowAudioFrames) {
  toy::ToyConfig c;
  c.utterances = 5;
  const auto m = toy::make_toy_model(c);
  const auto z = boc_concept(m.states);
  EXPECT_EQ(z.z.rows(), m.states.stacked_frames(0, FrameScope::Audio).rows());
  EXPECT_EQ(z.z.cols(), alphabet::kSize);
  const auto b = boc_vector(m.states.utterances()[0].transcript);
  for (int j = 0; j < alphabet::kSize; ++j) EXPECT_DOUBLE_EQ(z.z(0, j), b[static_cast<std::size_t>(j)]);
}

TEST(Concepts, ProxyVocabularyAndOneHot) {
  EXPECT_EQ(first_word("  Hello, world"), "hello");
  std::vector<UtteranceStates> us;
  const std::vector<std::string> texts = {"b x", "a y", "b z", "c"};
  for (std::size_t i = 0; i < texts.size(); ++i) {
    UtteranceStates u;
    u.id = "u" + std::to_string(i);
    u.transcript = texts[i];
    u.layers[0] = MatrixF::Ones(2, 3);
    us.push_back(u);
  }
  const HiddenStateSet set(us);
  const auto v = build_proxy_vocabulary(set, 3);
  EXPECT_EQ(v.words, (std::vector<std::string>{"b", "a"}));
  EXPECT_EQ(v.index_of("c"), v.other());
  const auto z = proxy_concept(set, v);
  EXPECT_TRUE(z.one_hot());
  EXPECT_EQ(z.z.cols(), 3);
  EXPECT_EQ(z.z.rows(), 8);
  EXPECT_EQ(z.z(0, 0), 1.0);
  EXPECT_EQ(z.z(2, 1), 1.0);
  EXPECT_EQ(z.z(6, 2), 1.0);
  EXPECT_NO_THROW(z.validate());
}

TEST(Concepts, CtcLabelsFromIdentityProbe) {
  const auto set = toy::one_hot_dump(4, 64, 9);
  CtcProbe p;
  p.weights = MatrixD::Zero(64, alphabet::kClasses);
  p.weights.topRows(alphabet::kClasses).setIdentity();
  p.bias = VectorD::Zero(alphabet::kClasses);
  const MatrixD frames = set.stacked_frames(0, FrameScope::Audio);
  const auto z = ctc_concept_labels(p, frames);
  ASSERT_EQ(z.z.rows(), frames.rows());
  for (Eigen::Index i = 0; i < frames.rows(); ++i) {
    Eigen::Index expect = 0, got = 0;
    frames.row(i).maxCoeff(&expect);
    z.z.row(i).maxCoeff(&got);
    EXPECT_EQ(got, expect);
    EXPECT_DOUBLE_EQ(z.z.row(i).sum(), 1.0);
  }
  MatrixD blank_frames = MatrixD::Zero(5, 64);
  blank_frames.col(alphabet::kBlank).setOnes();
  const auto zb = ctc_concept_labels(p, blank_frames);
  for (Eigen::Index i = 0; i < 5; ++i) EXPECT_EQ(zb.z(i, alphabet::kBlank), 1.0);
  EXPECT_THROW(ctc_concept_labels(p, MatrixD::Zero(2, 10)), InputError);
}

TEST(Concepts, SoftCtcRowsAreDistributions) {
  const auto set = toy::one_hot_dump(3, 64, 2);
  const auto p = init_ctc_probe(64, 0.5, 3);
  const auto z = ctc_concept_labels(p, set, 0, true);
  EXPECT_FALSE(z.one_hot());
  for (Eigen::Index i = 0; i < z.z.rows(); ++i) EXPECT_NEAR(z.z.row(i).sum(), 1.0, 1e-12);
}

TEST(Concepts, OneHotValidationCatchesBrokenRows) {
  ConceptMatrix c;
  c.kind = ConceptKind::Proxy;
  c.z = MatrixD::Zero(2, 3);
  c.z(0, 1) = 1.0;
  EXPECT_THROW(c.validate(), InputError);
}

TEST(Stack, NineLayers) {
  toy::ToyConfig c;
  c.utterances = 12;
  const auto m = toy::make_toy_model(c);
  const auto stack = build_stack(m.states, make_concept_builder(ConceptKind::Acoustic));
  EXPECT_EQ(stack.layers(), (std::vector<int>{0, 4, 8, 12, 16, 20, 24, 28, 31}));
  for (const auto& [layer, e] : stack.erasers) {
    EXPECT_EQ(e.layer, layer);
    EXPECT_LE(erased_rank(e), 2);
  }
}

TEST(Stack, SingleLayerEqualsDirectFit) {
  toy::ToyConfig c;
  c.utterances = 10;
  const auto m = toy::make_toy_model(c);
  const auto builder = make_concept_builder(ConceptKind::Boc);
  const auto stack = build_stack(m.states, builder, std::nullopt, {16});
  const auto direct = fit_leace(m.states.stacked_frames(16, FrameScope::Audio), builder(m.states, 16));
  ASSERT_EQ(stack.erasers.size(), 1u);
  EXPECT_EQ(stack.erasers.at(16).projection, direct.projection);
  EXPECT_THROW(build_stack(m.states, builder, std::nullopt, {17}), InputError);
}

TEST(Stack, ContainerRoundTrip) {
  auto stack = random_stack(8, 3, 5, {0, 4});
  stack.concept_info["note"] = "x";
  const auto container = stack.to_container();
  const auto back = EraserStack::from_container(container);
  EXPECT_EQ(back.layers(), stack.layers());
  for (int l : stack.layers()) {
    EXPECT_EQ(back.erasers.at(l).projection, stack.erasers.at(l).projection.cast<float>().cast<double>());
    EXPECT_EQ(back.erasers.at(l).seed, stack.erasers.at(l).seed);
    EXPECT_EQ(back.erasers.at(l).concept_dim, 3);
  }
  EXPECT_EQ(back.concept_info, stack.concept_info);
  EXPECT_NE(stack.erasers.at(0).projection, stack.erasers.at(4).projection);
}

TEST(Stack, ApplyTouchesEveryPosition) {
  auto u = toy::one_hot_dump(2, 64, 1).utterances();
  u[0].audio_span = {{1, 3}};
  const HiddenStateSet set(u);
  const auto stack = random_stack(64, 20, 0, {0});
  const auto out = apply_stack(stack, set);
  const MatrixD before = set.stacked_frames(0);
  const MatrixD after = out.stacked_frames(0);
  EXPECT_LT((after - apply_eraser(stack.erasers.at(0), before)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Diagnostic, AcousticErasureLeavesTextAlone) {
  toy::ToyConfig c;
  c.utterances = 40;
  const auto m = toy::make_toy_model(c);
  const auto stack = build_stack(m.states, make_concept_builder(ConceptKind::Acoustic), std::nullopt, {31});
  CtcTrainOptions o;
  o.epochs = 30;
  const auto d = decodability_delta(m.states, stack, 31, {0.8, 2}, o);
  EXPECT_GT(d.before, 0.9);
  EXPECT_LE(std::abs(d.delta()), 0.03);
}

TEST(ConceptKind, NamesRoundTrip) {
  for (auto k : {ConceptKind::Boc, ConceptKind::Proxy, ConceptKind::Ctc, ConceptKind::Acoustic, ConceptKind::Random,
                 ConceptKind::Custom})
    EXPECT_EQ(parse_concept_kind(concept_kind_name(k)), k);
  EXPECT_THROW(parse_concept_kind("prosody"), InputError);
}
