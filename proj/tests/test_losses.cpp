#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

#include "co2net/errors.hpp"
#include "co2net/losses.hpp"

#include <algorithm>
#include <cmath>

using namespace co2net;
using co2net::testing::ParamSet;
using co2net::testing::random_matrix;

namespace {

Matrix col(std::initializer_list<double> v) {
  Matrix m(static_cast<Index>(v.size()), 1);
  Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

double cosine_dist(const Vector& u, const Vector& v) { return 0.5 * (1.0 - u.dot(v) / (u.norm() * v.norm())); }

/// Direct transcription of the pair loss from the written formula.
double cas_pair_oracle(const Matrix& s_m, const Matrix& x_m, const Matrix& s_n, const Matrix& x_n, int j,
                       double margin) {
  auto agg = [&](const Matrix& s, const Matrix& x, double sign) {
    Vector w(s.rows());
    double z = 0.0;
    for (Index t = 0; t < s.rows(); ++t) z += std::exp(sign * s(t, j));
    for (Index t = 0; t < s.rows(); ++t) w[t] = std::exp(sign * s(t, j)) / z;
    Vector out = Vector::Zero(x.cols());
    for (Index t = 0; t < s.rows(); ++t) out += w[t] * x.row(t).transpose();
    return out;
  };
  const Vector hm = agg(s_m, x_m, 1.0), lm = agg(s_m, x_m, -1.0);
  const Vector hn = agg(s_n, x_n, 1.0), ln = agg(s_n, x_n, -1.0);
  const double a = std::max(0.0, cosine_dist(hm, hn) - cosine_dist(hm, ln) + margin);
  const double b = std::max(0.0, cosine_dist(hm, hn) - cosine_dist(lm, hn) + margin);
  return 0.5 * (a + b);
}

ForwardGraph graph_with(Tape& t, const Matrix& tcam_supp, const Matrix& fused) {
  ForwardGraph g;
  g.tcam_supp = t.constant(tcam_supp);
  g.fused_features = t.constant(fused);
  return g;
}

}  // namespace

TEST_CASE("top-k MIL loss") {
  Tape t;
  SUBCASE("worked example") {
    Matrix s(4, 2);
    s << 4, 0, 3, 0, 2, 0, 1, 0;
    const double v = topk_mil_loss(t.constant(s), {1}, 1, 2).scalar();
    const double z = std::exp(3.5) + 1.0;
    const double expected = -0.5 * std::log(std::exp(3.5) / z) - 0.5 * std::log(1.0 / z);
    CHECK(std::abs(v - expected) <= 1e-12);
    CHECK(std::abs(v - oracle::topk_mil(s, {1}, 1, 2)) <= 1e-12);
  }
  SUBCASE("k = T reduces to the column mean") {
    Rng rng(1);
    Matrix s = random_matrix(5, 3, rng);
    const double v = topk_mil_loss(t.constant(s), {0, 1}, 1, 1).scalar();
    const Matrix means = s.colwise().mean();
    const double mv = topk_mil_loss(t.constant(means), {0, 1}, 1, 1).scalar();
    CHECK(std::abs(v - mv) <= 1e-12);
  }
  SUBCASE("all-zero extended label") {
    CHECK_THROWS_AS(topk_mil_loss(t.constant(Matrix::Zero(4, 3)), {0, 0}, 0, 8), LabelError);
  }
  SUBCASE("unit attention makes original and suppressed losses agree") {
    Rng rng(2);
    Matrix s = random_matrix(9, 4, rng);
    Var tcam = t.constant(s);
    Var supp = broadcast_mul_colvec(tcam, t.constant(Matrix::Ones(9, 1)));
    CHECK(topk_mil_loss(tcam, {1, 0, 1}, 1, 8).scalar() == topk_mil_loss(supp, {1, 0, 1}, 1, 8).scalar());
  }
  SUBCASE("permutation invariant along time") {
    Rng rng(3);
    Matrix s = random_matrix(10, 3, rng);
    Matrix p = s.colwise().reverse();
    CHECK(std::abs(topk_mil_loss(t.constant(s), {0, 1}, 1, 4).scalar() -
                   topk_mil_loss(t.constant(p), {0, 1}, 1, 4).scalar()) <= 1e-12);
  }
  SUBCASE("matches exhaustive top-k subsets") {
    Rng rng(4);
    for (int i = 0; i < 50; ++i) {
      Matrix s = random_matrix(7, 3, rng, -3.0, 3.0);
      CHECK(std::abs(topk_mil_loss(t.constant(s), {1, 0}, 0, 3).scalar() - oracle::topk_mil(s, {1, 0}, 0, 3)) <= 1e-9);
    }
  }
}

TEST_CASE("co-activity loss") {
  Tape t;
  SUBCASE("no pairs") { CHECK(coactivity_loss(t, {}, 0.5).scalar() == 0.0); }
  SUBCASE("identical videos with a peaked weighting") {
    Matrix s(3, 2);
    s << 40, 0, -40, 0, -40, 0;
    Matrix x(3, 2);
    x << 1, 0, 0, 1, 0, 1;
    ForwardGraph g = graph_with(t, s, x);
    CasPair p{&g, &g, 0};
    CHECK(coactivity_loss(t, std::span<const CasPair>(&p, 1), 0.5).scalar() <= 1e-12);
  }
  SUBCASE("hand case against the transcribed formula") {
    Matrix s_m(3, 2), s_n(3, 2), x_m(3, 2), x_n(3, 2);
    s_m << 0.5, -1, 2.0, 0, -0.3, 1;
    s_n << 1.5, 0, -1.0, 2, 0.2, 0;
    x_m << 1, 2, -1, 0.5, 0.3, -2;
    x_n << 0.2, 1, 1.5, -1, -0.7, 0.4;
    ForwardGraph gm = graph_with(t, s_m, x_m), gn = graph_with(t, s_n, x_n);
    CasPair p{&gm, &gn, 0};
    const double v = coactivity_loss(t, std::span<const CasPair>(&p, 1), 0.5).scalar();
    CHECK(std::abs(v - cas_pair_oracle(s_m, x_m, s_n, x_n, 0, 0.5)) <= 1e-12);
  }
  SUBCASE("mean over pairs and degenerate flag") {
    Rng rng(5);
    Matrix s1 = random_matrix(4, 3, rng), s2 = random_matrix(4, 3, rng), x1 = random_matrix(4, 5, rng),
           x2 = random_matrix(4, 5, rng);
    ForwardGraph a = graph_with(t, s1, x1), b = graph_with(t, s2, x2), z = graph_with(t, s2, Matrix::Zero(4, 5));
    std::vector<CasPair> pairs{{&a, &b, 1}, {&b, &a, 2}};
    const double expected =
        0.5 * (cas_pair_oracle(s1, x1, s2, x2, 1, 0.5) + cas_pair_oracle(s2, x2, s1, x1, 2, 0.5));
    bool degenerate = true;
    CHECK(std::abs(coactivity_loss(t, pairs, 0.5, &degenerate).scalar() - expected) <= 1e-12);
    CHECK_FALSE(degenerate);
    std::vector<CasPair> bad{{&a, &z, 0}};
    coactivity_loss(t, bad, 0.5, &degenerate);
    CHECK(degenerate);
  }
}

TEST_CASE("mutual learning loss") {
  Tape t;
  SUBCASE("worked mse example") {
    CHECK(mutual_learning_loss(t.constant(col({1, 0})), t.constant(col({0, 0})), 0.5, DeltaMode::mse).scalar() == 0.5);
  }
  SUBCASE("coincident tracks give zero") {
    Rng rng(6);
    Matrix a = random_matrix(6, 1, rng, 0.0, 1.0);
    a(0, 0) = 0.0;
    a(1, 0) = 1.0;
    for (DeltaMode m : {DeltaMode::mse, DeltaMode::mae, DeltaMode::kl, DeltaMode::js})
      CHECK(std::abs(mutual_learning_loss(t.constant(a), t.constant(a), 0.5, m).scalar()) <= 1e-6);
  }
  SUBCASE("nonnegative and finite at the clamp edges") {
    Matrix a = col({0, 1, 0.5, 1}), b = col({1, 0, 0.25, 1});
    for (DeltaMode m : {DeltaMode::mse, DeltaMode::mae, DeltaMode::kl, DeltaMode::js}) {
      const double v = mutual_learning_loss(t.constant(a), t.constant(b), 0.3, m).scalar();
      CHECK(v > 0.0);
      CHECK(std::isfinite(v));
    }
  }
  SUBCASE("Bernoulli KL and JS values") {
    const double p = 0.3, q = 0.6;
    const double kl_qp = q * std::log(q / p) + (1 - q) * std::log((1 - q) / (1 - p));
    CHECK(std::abs(attention_divergence(t.constant(col({p})), t.constant(col({q})), DeltaMode::kl).scalar() - kl_qp) <=
          1e-12);
    const double m = 0.5 * (p + q);
    const double js = 0.5 * (p * std::log(p / m) + (1 - p) * std::log((1 - p) / (1 - m))) +
                      0.5 * (q * std::log(q / m) + (1 - q) * std::log((1 - q) / (1 - m)));
    CHECK(std::abs(attention_divergence(t.constant(col({p})), t.constant(col({q})), DeltaMode::js).scalar() - js) <=
          1e-12);
  }
  SUBCASE("domain error outside [0,1]") {
    CHECK_THROWS_AS(mutual_learning_loss(t.constant(col({1.5})), t.constant(col({0.5})), 0.5, DeltaMode::mse),
                    DomainError);
  }
  SUBCASE("stop-gradient operand receives nothing") {
    ParamSet ps;
    Parameter& a = ps.add(col({0.2, 0.7, 0.9}));
    Parameter& b = ps.add(col({0.4, 0.1, 0.5}));
    for (DeltaMode m : {DeltaMode::mse, DeltaMode::mae, DeltaMode::kl, DeltaMode::js}) {
      a.tensor.zero_grad();
      b.tensor.zero_grad();
      Tape tape;
      // alpha = 1 keeps only the term predicting a from a fixed b.
      tape.backward(mutual_learning_loss(tape.parameter(a), tape.parameter(b), 1.0, m));
      CHECK(b.tensor.grad().cwiseAbs().maxCoeff() == 0.0);
      CHECK(a.tensor.grad().cwiseAbs().maxCoeff() > 0.0);
    }
  }
}

TEST_CASE("opposite and norm losses") {
  Tape t;
  SUBCASE("tracks equal to 1 - s give zero") {
    Rng rng(7);
    Matrix s = random_matrix(5, 3, rng);
    Var tcam = t.constant(s);
    Matrix bg = background_probability(tcam).value();
    Var a = t.constant((1.0 - bg.array()).matrix());
    CHECK(opposite_loss(a, a, a, tcam).scalar() <= 1e-15);
  }
  SUBCASE("unit tracks with certain background give one") {
    Matrix s = Matrix::Zero(4, 3);
    s.col(2).setConstant(1000.0);
    Var one = t.constant(Matrix::Ones(4, 1));
    CHECK(std::abs(opposite_loss(one, one, one, t.constant(s)).scalar() - 1.0) <= 1e-12);
  }
  SUBCASE("random case against the formula") {
    Rng rng(8);
    Matrix s = random_matrix(6, 4, rng);
    Matrix ar = random_matrix(6, 1, rng, 0, 1), af = random_matrix(6, 1, rng, 0, 1);
    Matrix a = (ar + af) / 2.0;
    Vector bg(6);
    for (Index r = 0; r < 6; ++r) bg[r] = std::exp(s(r, 3)) / s.row(r).array().exp().sum();
    auto term = [&](const Matrix& x) { return (x.col(0) + bg).array().operator-(1.0).abs().mean(); };
    const double expected = (term(ar) + term(af) + term(a)) / 3.0;
    CHECK(std::abs(opposite_loss(t.constant(ar), t.constant(af), t.constant(a), t.constant(s)).scalar() - expected) <=
          1e-12);
  }
  SUBCASE("norm examples") {
    CHECK(norm_loss(t.constant(Matrix::Zero(3, 1)), t.constant(Matrix::Zero(3, 1)), t.constant(Matrix::Zero(3, 1)))
              .scalar() == 0.0);
    CHECK(norm_loss(t.constant(Matrix::Ones(3, 1)), t.constant(Matrix::Ones(3, 1)), t.constant(Matrix::Ones(3, 1)))
              .scalar() == 1.0);
    CHECK(std::abs(norm_loss(t.constant(col({1, 0})), t.constant(col({0, 0})), t.constant(col({0.5, 0}))).scalar() -
                   0.25) <= 1e-15);
  }
}

TEST_CASE("total loss aggregation") {
  Rng rng(9);
  ModelConfig mc;
  mc.feature_dim = 4;
  mc.num_classes = 3;
  mc.hidden = 5;
  Co2Net net(mc, rng);
  std::vector<VideoRecord> videos(3);
  for (int i = 0; i < 3; ++i) {
    videos[i].id = "v" + std::to_string(i);
    videos[i].rgb = random_matrix(10, 4, rng);
    videos[i].flow = random_matrix(10, 4, rng);
    videos[i].labels = {i == 2 ? 0 : 1, 0, 1};
  }
  auto run = [&](const LossConfig& cfg) {
    Tape tape;
    ForwardContext ctx{tape};
    std::vector<ForwardGraph> graphs;
    std::vector<const VideoRecord*> recs;
    for (auto& v : videos) {
      graphs.push_back(model_forward(ctx, v, net));
      recs.push_back(&v);
    }
    std::vector<CasPair> pairs{{&graphs[0], &graphs[1], 0}};
    return total_loss(tape, graphs, recs, pairs, cfg).breakdown;
  };
  LossConfig full;
  LossBreakdown b = run(full);
  REQUIRE(b.mil_org);
  REQUIRE(b.norm);
  CHECK(std::abs(b.total - (*b.mil_org + *b.mil_supp + *b.cas + *b.ml + 0.8 * *b.oppo + 0.8 * *b.norm)) <= 1e-12);
  CHECK(*b.mil_org >= 0.0);
  CHECK(*b.cas >= 0.0);
  CHECK(*b.oppo >= 0.0);

  SUBCASE("linear in the lambdas") {
    LossConfig c = full;
    c.lambda1 = 1.8;
    LossBreakdown b1 = run(c);
    CHECK(std::abs((b1.total - b.total) / 1.0 - *b.oppo) <= 1e-12);
    c.lambda1 = 0.0;
    c.lambda2 = 0.0;
    LossBreakdown b0 = run(c);
    CHECK(std::abs(b0.total - (*b.mil_org + *b.mil_supp + *b.cas + *b.ml)) <= 1e-12);
  }
  SUBCASE("disabled terms are absent") {
    LossConfig c;
    c.enabled = {LossTerm::mil};
    LossBreakdown m = run(c);
    CHECK_FALSE(m.cas.has_value());
    CHECK_FALSE(m.ml.has_value());
    CHECK(m.total == *m.mil_org + *m.mil_supp);
    nlohmann::json j = m.to_json(7);
    CHECK(j["step"] == 7);
    CHECK(j["cas"].is_null());
    CHECK(j.size() == 8);
  }
  SUBCASE("config parsing") {
    CHECK(parse_delta_mode("js") == DeltaMode::js);
    CHECK(parse_loss_term("oppo") == LossTerm::oppo);
    CHECK_THROWS_AS(parse_delta_mode("l2"), ConfigError);
    LossConfig c;
    c.alpha = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
}
