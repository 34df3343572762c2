#include <cmath>
#include <cstring>
#include <limits>

#include <gtest/gtest.h>

#include "evpan/grid.hpp"
#include "evpan/rng.hpp"
#include "oracles.hpp"

using namespace evpan;

TEST(DenseGrid, IndexingIsRowMajorChannelMinor) {
  DenseGrid g(2, 3, 2);
  g.at(1, 2, 1) = 7.0;
  EXPECT_EQ(g.data[(1 * 3 + 2) * 2 + 1], 7.0);
  EXPECT_EQ(g.pixel(5)[1], 7.0);
}

TEST(DenseGrid, RejectsZeroDimensions) {
  EXPECT_THROW(DenseGrid(0, 3, 2), ValidationError);
  EXPECT_THROW(DenseGrid(3, 0, 2), ValidationError);
  EXPECT_THROW(DenseGrid(3, 3, 0), ValidationError);
  EXPECT_THROW(DenseGrid(2, 2, 2, std::vector<double>(7, 0.0)), ValidationError);
}

TEST(LabelGrid, ClassRangeCheckSkipsVoid) {
  LabelGrid labels(1, 3, std::vector<std::uint32_t>{0, kVoidLabel, 2});
  EXPECT_NO_THROW(labels.require_classes_below(3, "test"));
  EXPECT_THROW(labels.require_classes_below(2, "test"), ValidationError);
}

TEST(PanopticGrid, EncodeDecodeRoundTrip) {
  const std::uint32_t id = PanopticGrid::encode(7, 42);
  EXPECT_EQ(id, 7042u);
  EXPECT_EQ(PanopticGrid::class_of(id), 7u);
  EXPECT_EQ(PanopticGrid::instance_of(id), 42u);
  EXPECT_THROW(PanopticGrid::encode(1, kPanopticOffset), ValidationError);
}

TEST(BBox, RejectsDegenerateAndChecksBounds) {
  EXPECT_THROW(BBox(3, 0, 3, 5), ValidationError);
  EXPECT_THROW(BBox(0, 5, 4, 5), ValidationError);
  BBox box(1, 2, 4, 6);
  EXPECT_EQ(box.width(), 3u);
  EXPECT_EQ(box.height(), 4u);
  EXPECT_TRUE(box.contains(2, 1));
  EXPECT_FALSE(box.contains(6, 1));
  EXPECT_NO_THROW(box.require_within(6, 4, "test"));
  EXPECT_THROW(box.require_within(5, 4, "test"), ValidationError);
}

TEST(Iou, HandlesEdgeCases) {
  BinaryMask a(2, 2), b(2, 2);
  EXPECT_EQ(iou(a, b), 0.0);  // both empty
  a.at(0, 0) = 1;
  a.at(0, 1) = 1;
  b.at(0, 1) = 1;
  b.at(1, 1) = 1;
  EXPECT_DOUBLE_EQ(iou(a, b), 1.0 / 3.0);
  BinaryMask c(2, 3);
  EXPECT_THROW(iou(a, c), ValidationError);
}

TEST(Resize, SameShapeIsBitwiseIdentity) {
  StreamRng rng(11, 5);
  DenseGrid g(5, 7, 3);
  for (double& v : g.data) v = rng.next_double() * 2.0 - 1.0;
  g.at(0, 0, 0) = -0.0;
  g.at(1, 1, 1) = -std::numeric_limits<double>::infinity();
  const DenseGrid out = resize_bilinear(g, 5, 7);
  ASSERT_EQ(out.data.size(), g.data.size());
  for (std::size_t i = 0; i < g.data.size(); ++i) {
    EXPECT_EQ(std::memcmp(&out.data[i], &g.data[i], sizeof(double)), 0) << "at " << i;
  }
}

TEST(Resize, UpscaleMatchesHandComputation) {
  DenseGrid g(2, 2, 1, std::vector<double>{0.0, 1.0, 2.0, 3.0});
  const DenseGrid out = resize_bilinear(g, 3, 3);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(out.at(0, 1, 0), 0.5);
  EXPECT_DOUBLE_EQ(out.at(0, 2, 0), 1.0);
  EXPECT_DOUBLE_EQ(out.at(1, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(out.at(1, 1, 0), 1.5);
  EXPECT_DOUBLE_EQ(out.at(2, 2, 0), 3.0);
}

TEST(Resize, SingleSourceSampleBroadcasts) {
  DenseGrid g(1, 1, 2, std::vector<double>{4.0, -2.0});
  const DenseGrid out = resize_bilinear(g, 3, 4);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      EXPECT_EQ(out.at(y, x, 0), 4.0);
      EXPECT_EQ(out.at(y, x, 1), -2.0);
    }
}

TEST(Resize, AgreesWithScalarOracle) {
  for (std::uint64_t seed : {1, 2, 3}) {
    StreamRng rng(seed, 9);
    DenseGrid g(4 + seed, 6, 2);
    for (double& v : g.data) v = rng.next_double() * 10.0 - 5.0;
    for (auto [oh, ow] : {std::pair<std::size_t, std::size_t>{9, 5},
                          {3, 11},
                          {28, 28},
                          {1, 1}}) {
      const DenseGrid out = resize_bilinear(g, oh, ow);
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x)
          for (std::size_t c = 0; c < 2; ++c)
            EXPECT_NEAR(out.at(y, x, c), oracle::bilinear_sample(g, oh, ow, y, x, c), 1e-12);
    }
  }
}

TEST(Argmax, TiesGoToLowestChannel) {
  DenseGrid g(1, 2, 3, std::vector<double>{1.0, 1.0, 0.5, 0.2, 0.9, 0.9});
  const ArgmaxResult r = channel_argmax(g);
  EXPECT_EQ(r.labels.at(0, 0), 0u);
  EXPECT_EQ(r.labels.at(0, 1), 1u);
  EXPECT_EQ(r.values.at(0, 0, 0), 1.0);
  EXPECT_EQ(r.values.at(0, 1, 0), 0.9);
}

TEST(ClassConfig, ValidatesStuffThingSplit) {
  ClassConfig ok{{0, 2}, {1}};
  EXPECT_NO_THROW(ok.validate());
  EXPECT_EQ(ok.num_classes(), 3u);
  EXPECT_TRUE(ok.is_stuff(2));
  EXPECT_TRUE(ok.is_thing(1));
  EXPECT_FALSE(ok.is_known(3));
  EXPECT_THROW((ClassConfig{{0, 1}, {1}}), ValidationError);
  ClassConfig dup;
  dup.stuff = {0, 1};
  dup.thing = {1};
  EXPECT_THROW(dup.validate(), ValidationError);
  ClassConfig empty;
  EXPECT_THROW(empty.validate(), ValidationError);
}
