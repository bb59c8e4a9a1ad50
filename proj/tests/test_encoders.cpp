#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <vector>

#include <subfuse/encoders.hpp>
#include <subfuse/nn.hpp>
#include <subfuse/ops.hpp>

#include "support/gradcheck.hpp"

using namespace subfuse;
using testsupport::finite_diff_max_err;
using testsupport::random_constant;

TEST_CASE("genomic encoder maps zero input to zero") {
  Rng rng = derive_rng(1, 0);
  GenomicEncoder enc = GenomicEncoder::init(6, 8, 4, rng);
  Tensor out = enc(Tensor::zeros({2, 6}));
  // Biases start at zero and SELU fixes 0, so the zero vector is a fixed
  // point of the whole stack.
  for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("genomic encoder treats batch rows independently") {
  Rng rng = derive_rng(2, 0);
  GenomicEncoder enc = GenomicEncoder::init(5, 8, 4, rng);
  std::mt19937_64 vals(3);
  const std::vector<double> row = testsupport::random_values(5, vals);
  std::vector<double> batch;
  batch.insert(batch.end(), row.begin(), row.end());
  batch.insert(batch.end(), row.begin(), row.end());
  Tensor out = enc(Tensor::constant(batch, {2, 5}));
  for (std::size_t j = 0; j < 4; ++j) CHECK(out.values()[j] == out.values()[4 + j]);
}

TEST_CASE("genomic encoder only reads its own subspace columns") {
  Rng rng = derive_rng(4, 0);
  GenomicEncoder enc = GenomicEncoder::init(3, 8, 4, rng);
  const std::vector<std::size_t> cols{0, 2, 4};
  std::mt19937_64 vals(5);
  std::vector<double> genes = testsupport::random_values(2 * 6, vals);
  Tensor out1 = enc.encode(Tensor::constant(genes, {2, 6}), cols);
  genes[1] += 10.0;  // column 1 is outside the subspace
  genes[6 + 3] -= 4.0;
  Tensor out2 = enc.encode(Tensor::constant(genes, {2, 6}), cols);
  CHECK(out1.values() == out2.values());
  genes[2] += 1.0;  // column 2 is inside
  Tensor out3 = enc.encode(Tensor::constant(genes, {2, 6}), cols);
  CHECK(out1.values() != out3.values());
}

TEST_CASE("genomic encoder validates the subspace") {
  Rng rng = derive_rng(6, 0);
  GenomicEncoder enc = GenomicEncoder::init(3, 8, 4, rng);
  Tensor genes = Tensor::zeros({2, 6});
  CHECK_THROWS_AS(enc.encode(genes, {}), config_error);
  CHECK_THROWS_AS(enc.encode(genes, {0, 1}), dim_error);      // wrong size
  CHECK_THROWS_AS(enc.encode(genes, {0, 1, 9}), dim_error);   // out of range
}

TEST_CASE("genomic encoder gradients match finite differences") {
  Rng rng = derive_rng(7, 0);
  GenomicEncoder enc = GenomicEncoder::init(4, 6, 3, rng);
  std::mt19937_64 vals(8);
  Tensor x = testsupport::random_param({3, 4}, vals);
  const std::vector<Tensor> leaves{x, enc.l1.weight, enc.l1.bias, enc.l2.weight, enc.l2.bias};
  CHECK(finite_diff_max_err(leaves, [&] { return frobenius_norm(enc(x)); }) < 1e-5);
}

TEST_CASE("identity projector passes the grid through") {
  HistologyProjector proj;
  std::vector<double> eye(3 * 3, 0.0);
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  proj.proj.weight = Tensor::param(eye, {3, 3});
  proj.proj.bias = Tensor::param({0.0, 0.0, 0.0}, {3});
  std::mt19937_64 vals(9);
  Tensor grid = random_constant({2, 4, 4, 3}, vals);
  CHECK(proj(grid).values() == grid.values());
}

TEST_CASE("projector applies the same map to every cell") {
  Rng rng = derive_rng(10, 0);
  HistologyProjector proj = HistologyProjector::init(3, 5, rng);
  std::vector<double> cell{0.4, -1.2, 2.0};
  std::vector<double> grid;
  for (int i = 0; i < 2 * 2; ++i) grid.insert(grid.end(), cell.begin(), cell.end());
  Tensor out = proj(Tensor::constant(grid, {1, 2, 2, 3}));
  for (std::size_t cell_i = 1; cell_i < 4; ++cell_i)
    for (std::size_t j = 0; j < 5; ++j) CHECK(out.values()[cell_i * 5 + j] == out.values()[j]);
}

TEST_CASE("projector rejects channel mismatch") {
  Rng rng = derive_rng(11, 0);
  HistologyProjector proj = HistologyProjector::init(3, 5, rng);
  CHECK_THROWS_AS(proj(Tensor::zeros({1, 2, 2, 4})), dim_error);
  CHECK_THROWS_AS(proj(Tensor::zeros({2, 2, 3})), dim_error);
}

TEST_CASE("projector gradients match finite differences") {
  Rng rng = derive_rng(12, 0);
  HistologyProjector proj = HistologyProjector::init(3, 4, rng);
  std::mt19937_64 vals(13);
  Tensor grid = testsupport::random_param({2, 3, 3, 3}, vals);
  CHECK(finite_diff_max_err({grid, proj.proj.weight, proj.proj.bias},
                            [&] { return frobenius_norm(proj(grid)); }) < 1e-5);
}

TEST_CASE("encoders are batch permutation equivariant") {
  Rng rng = derive_rng(14, 0);
  GenomicEncoder enc = GenomicEncoder::init(4, 6, 3, rng);
  std::mt19937_64 vals(15);
  Tensor x = random_constant({3, 4}, vals);
  Tensor fwd = enc(x);
  // Swap rows 0 and 2 of the input; outputs must swap identically.
  std::vector<double> swapped = x.values();
  for (std::size_t j = 0; j < 4; ++j) std::swap(swapped[j], swapped[2 * 4 + j]);
  Tensor swapped_out = enc(Tensor::constant(swapped, {3, 4}));
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(swapped_out.values()[j] == fwd.values()[2 * 3 + j]);
    CHECK(swapped_out.values()[2 * 3 + j] == fwd.values()[j]);
    CHECK(swapped_out.values()[3 + j] == fwd.values()[3 + j]);
  }
}
