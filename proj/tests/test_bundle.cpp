#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pdfb/bench.hpp"
#include "pdfb/bundle.hpp"

using namespace pdfb;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "pdfb_bundle_tests" / name;
  fs::remove_all(d);
  return d;
}

void expect_same_problem(const SaddleProblem& a, const SaddleProblem& b) {
  ASSERT_EQ(a.p(), b.p());
  ASSERT_EQ(a.l(), b.l());
  EXPECT_EQ(a.K.to_dense(), b.K.to_dense());
  EXPECT_NEAR(a.L_f(), b.L_f(), 1e-9 * (1.0 + a.L_f()));
  Rng rng(99);
  for (int t = 0; t < 3; ++t) {
    const Vector x = rng.normal_vector(a.p()), y = 3.0 * rng.normal_vector(a.l());
    EXPECT_LE((a.grad_f(x) - b.grad_f(x)).norm(), 1e-12 * (1.0 + a.grad_f(x).norm()));
    EXPECT_EQ(prox_conjugate(a.hconj, y, 0.7), prox_conjugate(b.hconj, y, 0.7));
  }
}

}  // namespace

TEST(Bundle, GroupLassoRoundTrip) {
  const GeneratedProblem g = generate(SyntheticSpec::ogl(3, 15, 20, 1));
  const fs::path dir = scratch("ogl");
  write_bundle(dir, g.prob, g.x_true, {{"generator", "ogl"}});
  const Bundle b = read_bundle(dir);
  expect_same_problem(g.prob, b.prob);
  ASSERT_TRUE(b.x_true.has_value());
  EXPECT_EQ(*b.x_true, g.x_true);
  EXPECT_EQ(b.meta.at("generator"), "ogl");
  EXPECT_EQ(b.meta.at("loss"), "quadratic");
  for (const auto& e : fs::directory_iterator(dir)) EXPECT_NE(e.path().extension(), ".tmp");
}

TEST(Bundle, LogisticRoundTrip) {
  Rng rng(2);
  Vector labels(6);
  labels << 1, 0, 0, 1, 1, 0;
  const SaddleProblem prob = make_problem(logistic_loss(LinearOperator::dense(rng.normal_matrix(6, 4)), labels),
                                          LinearOperator::sparse(chain_difference(4)), ConjugateProxSpec::l1_ball(0.5, 3));
  const fs::path dir = scratch("logistic");
  write_bundle(dir, prob);
  const Bundle b = read_bundle(dir);
  expect_same_problem(prob, b.prob);
  EXPECT_FALSE(b.x_true.has_value());
}

TEST(Bundle, SplitDualRoundTrip) {
  Rng rng(3);
  Vector labels(5);
  labels << 1, -1, 1, -1, 1;
  const SaddleProblem prob = split_dual_construct(LinearOperator::sparse(chain_difference(3)),
                                                  LinearOperator::dense(rng.normal_matrix(5, 3)), labels,
                                                  ConjugateProxSpec::box(0.2, 2));
  const fs::path dir = scratch("split");
  write_bundle(dir, prob);
  const Bundle b = read_bundle(dir);
  expect_same_problem(prob, b.prob);
  EXPECT_EQ(b.meta.at("loss"), "zero");
  EXPECT_EQ(b.prob.hconj.kind(), ConjugateProxSpec::Kind::composite);
}

TEST(Bundle, LatentProblemHasNoFileForm) {
  SyntheticSpec s = SyntheticSpec::ogl(3, 15, 20, 2);
  s.kind = SyntheticSpec::Kind::latent_group_lasso;
  EXPECT_THROW(write_bundle(scratch("latent"), generate(s).prob), FormatError);
}

TEST(Bundle, MissingDirectory) {
  EXPECT_THROW(read_bundle(scratch("absent")), IoError);
}

TEST(Bundle, MalformedMeta) {
  const GeneratedProblem g = make_lasso(6, 3, 0.5, 0.1, 4);
  const fs::path dir = scratch("bad");
  write_bundle(dir, g.prob);
  auto rewrite = [&](const std::string& text) {
    std::ofstream(dir / "meta.txt") << text;
  };
  rewrite("loss=quadratic\nhconj={not json\n");
  EXPECT_THROW(read_bundle(dir), FormatError);
  rewrite("loss=cubic\nhconj={\"kind\":\"box\",\"lambda\":0.5,\"dim\":3}\n");
  EXPECT_THROW(read_bundle(dir), FormatError);
  rewrite("loss=quadratic\n");
  EXPECT_THROW(read_bundle(dir), FormatError);
  rewrite("just a line\n");
  EXPECT_THROW(read_bundle(dir), FormatError);
  rewrite("loss=quadratic\nhconj={\"kind\":\"simplex\"}\n");
  EXPECT_THROW(read_bundle(dir), FormatError);
}

TEST(VectorFiles, CommentsAndBadValues) {
  std::istringstream ok("# header\n1.5\n\n% note\n-2\n");
  const Vector v = parse_vector(ok, "test");
  ASSERT_EQ(v.size(), 2);
  EXPECT_EQ(v[1], -2.0);
  std::istringstream bad("1.0\nabc\n");
  EXPECT_THROW(parse_vector(bad, "test"), FormatError);
}

TEST(VectorFiles, FullPrecision) {
  Vector v(2);
  v << 0.1, 1.0 / 3.0;
  std::istringstream in(format_vector(v));
  EXPECT_EQ(parse_vector(in, "test"), v);
}
