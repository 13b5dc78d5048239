#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

#include "co2net/errors.hpp"
#include "co2net/localization.hpp"

#include <cmath>
#include <set>

using namespace co2net;
using co2net::testing::random_matrix;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

std::set<std::pair<double, double>> bounds(const std::vector<Proposal>& ps) {
  std::set<std::pair<double, double>> out;
  for (const auto& p : ps) out.emplace(p.t_start, p.t_end);
  return out;
}

}  // namespace

TEST_CASE("localize config defaults") {
  LocalizeConfig c;
  CHECK(c.class_threshold == 0.2);
  REQUIRE(c.attn_thresholds.size() == 17);
  CHECK(c.attn_thresholds.front() == 0.1);
  CHECK(c.attn_thresholds[1] == 0.15);
  CHECK(c.attn_thresholds.back() == 0.9);
  CHECK(c.oic_inflation == 0.25);
  CHECK(c.nms_sigma == 0.3);
  CHECK(c.min_proposal_len == 2);
  c.attn_thresholds = {0.5, 1.0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("video class scores") {
  SUBCASE("uniform logits") {
    Vector s = video_class_scores(Matrix::Zero(6, 4), 8);
    REQUIRE(s.size() == 3);
    for (Index c = 0; c < 3; ++c) CHECK(std::abs(s[c] - 0.25) <= 1e-15);
  }
  SUBCASE("dominant class saturates") {
    Matrix m = Matrix::Zero(5, 3);
    m.col(1).setConstant(50.0);
    CHECK(video_class_scores(m, 8)[1] > 1.0 - 1e-12);
  }
  SUBCASE("small case against a direct computation") {
    Matrix m(4, 3);
    m << 0.1, 2.0, -1.0, 0.5, 1.0, 0.0, -0.2, 3.0, 0.3, 0.9, -1.0, 0.2;
    // k = max(1, 4 / 2) = 2
    const double v0 = (0.9 + 0.5) / 2, v1 = (3.0 + 2.0) / 2, v2 = (0.3 + 0.2) / 2;
    const double z = std::exp(v0) + std::exp(v1) + std::exp(v2);
    Vector s = video_class_scores(m, 2);
    CHECK(std::abs(s[0] - std::exp(v0) / z) <= 1e-12);
    CHECK(std::abs(s[1] - std::exp(v1) / z) <= 1e-12);
  }
  SUBCASE("class selection with fallback") {
    CHECK(select_classes(vec({0.3, 0.1, 0.25}), 0.2) == std::vector<int>{0, 2});
    CHECK(select_classes(vec({0.1, 0.15, 0.05}), 0.2) == std::vector<int>{1});
  }
}

TEST_CASE("proposal generation") {
  LocalizeConfig c;
  SUBCASE("empty mask") { CHECK(generate_proposals(Vector::Zero(8), {0}, c).empty()); }
  SUBCASE("run extraction example") {
    c.attn_thresholds = {0.5};
    auto ps = generate_proposals(vec({0.9, 0.9, 0.1, 0.8, 0.8}), {0}, c);
    CHECK(bounds(ps) == std::set<std::pair<double, double>>{{0, 2}, {3, 5}});
  }
  SUBCASE("one copy per class, duplicates collapsed") {
    c.attn_thresholds = {0.5, 0.6};
    auto ps = generate_proposals(vec({0.9, 0.9, 0.1, 0.8, 0.8}), {2, 0, 2}, c);
    CHECK(ps.size() == 4);
    for (const auto& p : ps) CHECK(p.confidence == 0.0);
  }
  SUBCASE("threshold order does not matter and thresholds only add segments") {
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
      Vector a = random_matrix(12, 1, rng, 0.0, 1.0).col(0);
      LocalizeConfig fwd = c, rev = c, fewer = c;
      std::reverse(rev.attn_thresholds.begin(), rev.attn_thresholds.end());
      fewer.attn_thresholds.resize(6);
      auto p = generate_proposals(a, {1}, fwd);
      CHECK(p == generate_proposals(a, {1}, rev));
      auto sub = bounds(generate_proposals(a, {1}, fewer));
      auto all = bounds(p);
      for (const auto& s : sub) CHECK(all.count(s) == 1);
    }
  }
  SUBCASE("matches maximal-run enumeration") {
    Rng rng(2);
    for (int i = 0; i < 100; ++i) {
      Vector a = random_matrix(8, 1, rng, 0.0, 1.0).col(0);
      std::set<std::pair<double, double>> expect;
      for (double th : c.attn_thresholds)
        for (auto [s, e] : oracle::runs(a, th, c.min_proposal_len)) expect.emplace(s, e);
      CHECK(bounds(generate_proposals(a, {0}, c)) == expect);
    }
  }
}

TEST_CASE("outer-inner contrast score") {
  SUBCASE("constant column") {
    Vector col = Vector::Constant(10, 0.7);
    CHECK(std::abs(oic_score(col, {3, 6, 0, 0}, 0.25)) <= 1e-15);
  }
  SUBCASE("worked example") { CHECK(oic_score(vec({0, 1, 1, 0}), {1, 3, 0, 0}, 0.5) == 1.0); }
  SUBCASE("full span has no outer region") {
    Vector col = vec({0.2, 0.4, 0.9});
    CHECK(std::abs(oic_score(col, {0, 3, 0, 0}, 0.25) - col.mean()) <= 1e-15);
  }
  SUBCASE("empty inner region and out-of-range proposal") {
    CHECK_THROWS_AS(oic_score(vec({1, 2, 3}), {1.2, 1.0, 0, 0}, 0.25), ContractError);
    CHECK_THROWS_AS(oic_score(vec({1, 2, 3}), {1.0, 4.0, 0, 0}, 0.25), ContractError);
  }
  SUBCASE("matches per-snippet classification") {
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
      const Index T = 2 + static_cast<Index>(uniform01(rng) * 7);
      Vector col = random_matrix(T, 1, rng).col(0);
      const double s = std::floor(uniform01(rng) * static_cast<double>(T - 1));
      const double e = s + 1 + std::floor(uniform01(rng) * static_cast<double>(T - s));
      CHECK(std::abs(oic_score(col, {s, e, 0, 0}, 0.25) - oracle::oic(col, s, e, 0.25)) <= 1e-12);
    }
  }
}

TEST_CASE("soft-NMS") {
  SUBCASE("disjoint proposals keep their confidence") {
    std::vector<Proposal> ps{{0, 2, 0, 0.5}, {3, 5, 0, 0.9}, {6, 9, 0, 0.7}};
    auto out = soft_nms(ps, 0.3);
    REQUIRE(out.size() == 3);
    CHECK(out[0].confidence == 0.9);
    CHECK(out[1].confidence == 0.7);
    CHECK(out[2].confidence == 0.5);
  }
  SUBCASE("identical proposals") {
    auto out = soft_nms({{2, 6, 1, 1.0}, {2, 6, 1, 0.9}}, 0.3);
    REQUIRE(out.size() == 2);
    CHECK(std::abs(out[1].confidence - 0.9 * std::exp(-1.0 / 0.3)) <= 1e-15);
    CHECK(std::abs(out[1].confidence - 0.0321) <= 5e-5);
  }
  SUBCASE("classes do not interact") {
    auto out = soft_nms({{2, 6, 1, 1.0}, {2, 6, 0, 0.9}}, 0.3);
    CHECK(out[1].confidence == 0.9);
  }
  SUBCASE("low confidences are dropped") {
    auto out = soft_nms({{0, 4, 0, 1.0}, {0, 4, 0, 2e-4}, {6, 8, 0, 5e-5}}, 0.3);
    CHECK(out.size() == 1);
  }
  SUBCASE("never increases confidence and matches global processing") {
    Rng rng(4);
    for (int i = 0; i < 200; ++i) {
      std::vector<Proposal> ps;
      const int n = 1 + static_cast<int>(uniform01(rng) * 10);
      for (int k = 0; k < n; ++k) {
        const double s = std::floor(uniform01(rng) * 7);
        const double e = s + 1 + std::floor(uniform01(rng) * (8 - s));
        ps.push_back({s, e, static_cast<int>(uniform01(rng) * 2), uniform01(rng)});
      }
      auto out = soft_nms(ps, 0.3);
      auto ref = oracle::soft_nms(ps, 0.3);
      REQUIRE(out.size() == ref.size());
      for (std::size_t k = 1; k < out.size(); ++k) CHECK(out[k - 1].confidence >= out[k].confidence);
      double max_in = 0.0;
      for (const auto& p : ps) max_in = std::max(max_in, p.confidence);
      for (const auto& p : out) CHECK(p.confidence <= max_in);
    }
  }
}

TEST_CASE("localize_video") {
  LocalizeConfig c;
  SUBCASE("planted action is recovered") {
    ForwardOutput o;
    const Index T = 20;
    o.a_fused = Vector::Constant(T, 0.02);
    o.a_fused.segment(6, 5).setConstant(0.95);
    o.tcam = Matrix::Zero(T, 3);
    o.tcam.block(6, 1, 5, 1).setConstant(6.0);
    o.tcam.col(2).setConstant(1.0);
    o.tcam_supp = o.tcam.array().colwise() * o.a_fused.array();
    auto ps = localize_video(o, c, 8);
    REQUIRE(!ps.empty());
    CHECK(ps[0].cls == 1);
    CHECK(ps[0].t_start == 6.0);
    CHECK(ps[0].t_end == 11.0);
    for (const auto& p : ps) {
      CHECK(p.t_start >= 0.0);
      CHECK(p.t_end <= T);
      CHECK(p.t_start < p.t_end);
      CHECK(p.cls < 2);
    }
  }
  SUBCASE("no class passes the threshold") {
    ForwardOutput o;
    o.a_fused = Vector::Constant(6, 0.5);
    o.tcam = Matrix::Zero(6, 6);
    o.tcam.col(5).setConstant(10.0);
    o.tcam_supp = o.tcam * 0.5;
    auto ps = localize_video(o, c, 8);
    for (const auto& p : ps) CHECK(p.cls == 0);
  }
}
