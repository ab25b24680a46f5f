#include <gtest/gtest.h>

#include "oracles.hpp"
#include "ticketforge/error.hpp"
#include "ticketforge/io.hpp"
#include "ticketforge/mask.hpp"
#include "ticketforge/model.hpp"
#include "ticketforge/pruning.hpp"

namespace tf = ticketforge;

TEST(Params, RolesAndPrunability) {
  EXPECT_EQ(tf::ParamStore::role_for("head.cls.fc1.w"), tf::ParamRole::head);
  EXPECT_EQ(tf::ParamStore::role_for("enc0.attn.q.w"), tf::ParamRole::trunk);
  EXPECT_TRUE(tf::ParamStore::is_prunable("enc0.attn.q.w", {4, 4}));
  EXPECT_FALSE(tf::ParamStore::is_prunable("enc0.attn.q.b", {4}));
  EXPECT_FALSE(tf::ParamStore::is_prunable("head.cls.fc1.w", {4, 4}));
}

TEST(Params, SerializationRoundTripsByteExactly) {
  const auto p = tf::build_model(tf::default_arch(tf::Family::two_stream), tf::find_task("count"), 3);
  const auto bytes = tf::serialize_params(p, "abc");
  std::string tag;
  const auto back = tf::deserialize_params(bytes, &tag);
  EXPECT_TRUE(back.bitwise_equal(p));
  EXPECT_EQ(tag, tf::normalize_tag("abc"));
  EXPECT_EQ(tf::serialize_params(back, "abc"), bytes);
}

TEST(Params, CorruptInputIsIoError) {
  const auto p = tf_test::random_store(1, false);
  auto bytes = tf::serialize_params(p);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  EXPECT_THROW(tf::deserialize_params(truncated), tf::IoError);
  bytes[0] = 'X';
  EXPECT_THROW(tf::deserialize_params(bytes), tf::IoError);
}

TEST(Mask, OnesCoversPrunableSetOnly) {
  const auto p = tf_test::random_store(2, false);
  const auto m = tf::Mask::ones(p);
  EXPECT_EQ(m.total(), p.prunable_count());
  EXPECT_EQ(m.zeros(), 0u);
  for (const auto& e : m.entries()) EXPECT_TRUE(p.entry(e.name).prunable);
}

TEST(Mask, SparsityAndApply) {
  auto p = tf_test::random_store(3, false);
  const auto m = tf::random_prune_count(tf::prunable_layout(p), 5, 1);
  EXPECT_EQ(m.zeros(), 5u);
  EXPECT_DOUBLE_EQ(m.sparsity(), 5.0 / static_cast<double>(m.total()));
  EXPECT_DOUBLE_EQ(m.sparsity_over(p), 5.0 / static_cast<double>(p.total_count()));
  m.apply(p);
  std::size_t zeros = 0;
  for (const auto& e : m.entries()) {
    for (std::size_t i = 0; i < e.keep.size(); ++i) {
      if (!e.keep[i]) {
        EXPECT_EQ(p.at(e.name)[i], 0.0);
        ++zeros;
      }
    }
  }
  EXPECT_EQ(zeros, 5u);
}

TEST(Mask, SerializationRoundTripsByteExactly) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = tf_test::random_store(seed, false);
    const auto m = tf::random_prune(tf::prunable_layout(p), 0.37, seed);
    const auto bytes = tf::serialize_mask(m, "cfg");
    std::string tag;
    const auto back = tf::deserialize_mask(bytes, &tag);
    EXPECT_TRUE(back == m);
    EXPECT_EQ(tf::serialize_mask(back, "cfg"), bytes);
    EXPECT_EQ(tag, tf::normalize_tag("cfg"));
  }
}

TEST(Mask, LayoutMismatchIsMaskError) {
  const auto a = tf_test::random_store(4, false);
  const auto b = tf_test::random_store(5, false);
  const auto m = tf::Mask::ones(a);
  if (!m.layout_matches(b)) EXPECT_THROW(m.check_layout(b), tf::MaskError);
  auto c = a;
  c.set("extra.w", tf::Tensor::zeros({2, 2}));
  EXPECT_FALSE(m.layout_matches(c));
  EXPECT_THROW(m.check_layout(c), tf::MaskError);
}

TEST(Io, HashAndTags) {
  EXPECT_EQ(tf::hash_hex(std::string_view("")), "cbf29ce484222325");
  EXPECT_EQ(tf::normalize_tag("abc").size(), 16u);
  EXPECT_EQ(tf::normalize_tag("0123456789abcdefXYZ"), "0123456789abcdef");
  const std::vector<std::uint8_t> bytes{'M', 'a', 'n'};
  EXPECT_EQ(tf::base64_encode(bytes), "TWFu");
}
