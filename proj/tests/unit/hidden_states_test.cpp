#include <gtest/gtest.h>

#include "casceq/error.hpp"
#include "casceq/hidden_states.hpp"
#include "toy_model.hpp"

using namespace casceq;
namespace toy = casceq::testing;

namespace {

UtteranceStates utt(std::string id, Eigen::Index t, Eigen::Index d, std::vector<int> layers) {
  UtteranceStates u;
  u.id = std::move(id);
  u.transcript = "hi";
  for (int l : layers) u.layers[l] = MatrixF::Constant(t, d, static_cast<float>(l));
  return u;
}

}  // namespace

TEST(HiddenStateSet, OneUtteranceTwoLayers) {
  const HiddenStateSet s({utt("u1", 5, 3, {0, 4})});
  EXPECT_EQ(s.layers(), (std::vector<int>{0, 4}));
  EXPECT_EQ(s.width(), 3);
  const auto d = s.dump(0, 4);
  EXPECT_EQ(d.frames.rows(), 5);
  EXPECT_EQ(d.layer_index, 4);
  EXPECT_EQ(d.acoustic_targets, nullptr);
}

TEST(HiddenStateSet, EmptyRoundTrip) {
  const HiddenStateSet s;
  const auto back = HiddenStateSet::from_container(s.to_container());
  EXPECT_TRUE(back.empty());
}

TEST(HiddenStateSet, RejectsInconsistentShapes) {
  EXPECT_THROW(HiddenStateSet({utt("a", 5, 3, {0}), utt("b", 5, 4, {0})}), InputError);
  EXPECT_THROW(HiddenStateSet({utt("a", 5, 3, {0}), utt("b", 5, 3, {1})}), InputError);
  EXPECT_THROW(HiddenStateSet({utt("a", 5, 3, {0}), utt("a", 5, 3, {0})}), InputError);
}

TEST(HiddenStateSet, AudioSpanRestrictsStacking) {
  auto a = utt("a", 6, 2, {0});
  a.audio_span = {{1, 4}};
  const HiddenStateSet s({a, utt("b", 2, 2, {0})});
  EXPECT_EQ(s.stacked_frames(0, FrameScope::All).rows(), 8);
  EXPECT_EQ(s.stacked_frames(0, FrameScope::Audio).rows(), 5);
  EXPECT_EQ(s.row_groups(all_indices(2), FrameScope::Audio), (std::vector<std::size_t>{0, 0, 0, 1, 1}));
}

TEST(HiddenStateSet, ToyContainerRoundTrip) {
  toy::ToyConfig c;
  c.utterances = 4;
  const auto toy = toy::make_toy_model(c);
  const auto container = toy.states.to_container();
  const auto back = HiddenStateSet::from_container(container);
  ASSERT_EQ(back.size(), 4u);
  EXPECT_EQ(back.layers(), kDefaultLayers);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& u = toy.states.utterances()[i];
    const auto& v = back.utterances()[i];
    EXPECT_EQ(u.id, v.id);
    EXPECT_EQ(u.transcript, v.transcript);
    EXPECT_EQ(u.layers, v.layers);
    EXPECT_EQ(*u.acoustic, *v.acoustic);
  }
  EXPECT_EQ(container.metadata().at("kind"), "hidden_states");
}

TEST(HiddenStateSet, TransformedReplacesOnlyListedLayers) {
  const HiddenStateSet s({utt("a", 3, 2, {0, 4})});
  const auto t = s.transformed({4}, [](int, const MatrixF& m) { return MatrixF(m * 0.0f); });
  EXPECT_EQ(t.utterances()[0].layers.at(0)(0, 0), 0.0f);
  EXPECT_EQ(t.utterances()[0].layers.at(4).cwiseAbs().maxCoeff(), 0.0f);
  EXPECT_THROW(s.transformed({8}, [](int, const MatrixF& m) { return m; }), InputError);
}
