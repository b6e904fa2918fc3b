#include "doctest.h"

#include <cstring>
#include <filesystem>

#include "mtm/checkpoint.hpp"
#include "mtm/errors.hpp"

using namespace mtm;

namespace {

det::ModelConfig toy_config() {
  det::ModelConfig c;
  c.embed_dim = 16;
  c.object_queries = 4;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.heads = 2;
  c.ffn_dim = 16;
  c.image_size = 16;
  return c;
}

bool same_bits(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("serialize then deserialize is bit-exact") {
  det::Detector model(toy_config(), 1);
  align::Discriminators discs(16, 2);
  mt::Oqkt oqkt(16, 2, 8, 3);
  auto params = model.parameters();
  ag::Adam opt(params, {.learning_rate = 1e-3});
  for (auto& p : params) p.tensor.mutable_grad()[0] = 0.25;
  opt.step();
  const auto ck = ckpt::capture(model, &discs, &oqkt, &opt);
  const auto bytes = ckpt::serialize(ck);
  const auto back = ckpt::deserialize(bytes);
  CHECK(back == ck);
  CHECK(ckpt::serialize(back) == bytes);
  CHECK(ck.has_prefix("det."));
  CHECK(ck.has_prefix("disc."));
  CHECK(ck.has_prefix("oqkt"));
  CHECK(ck.find("opt.step") != nullptr);

  det::Detector restored(toy_config(), 99);
  align::Discriminators restored_discs(16, 98);
  mt::Oqkt restored_oqkt(16, 2, 8, 97);
  auto restored_params = restored.parameters();
  ag::Adam restored_opt(restored_params, {.learning_rate = 1e-3});
  ckpt::restore(back, restored, &restored_discs, &restored_oqkt, &restored_opt);
  const auto a = model.parameters(), b = restored.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(same_bits(a[i].tensor.data(), b[i].tensor.data()));
  CHECK(restored_opt.step_count() == 1);
  CHECK(restored_opt.first_moments() == opt.first_moments());
  CHECK(ckpt::capture(restored, &restored_discs, &restored_oqkt, &restored_opt) == ck);
}

TEST_CASE("file round trip and load_checkpoint") {
  const auto path = std::filesystem::temp_directory_path() / "mtm_test.ckpt";
  det::Detector model(toy_config(), 4);
  align::Discriminators discs(16, 5);
  ckpt::save_checkpoint(model, &discs, nullptr, path);
  const auto state = ckpt::load_checkpoint(path);
  CHECK(state.has_discriminators);
  CHECK(state.model.config() == toy_config());
  auto original = model.parameters();
  auto loaded = const_cast<det::Detector&>(state.model).parameters();
  for (std::size_t i = 0; i < original.size(); ++i) CHECK(same_bits(original[i].tensor.data(), loaded[i].tensor.data()));
  std::filesystem::remove(path);
  CHECK_THROWS(ckpt::read_file(path));
}

TEST_CASE("malformed files are rejected") {
  det::Detector model(toy_config(), 6);
  const auto bytes = ckpt::serialize(ckpt::capture(model));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(ckpt::deserialize(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[8] = 9;
  CHECK_THROWS_AS(ckpt::deserialize(bad_version), FormatError);
  CHECK_THROWS_AS(ckpt::deserialize(std::span(bytes).first(bytes.size() - 3)), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(ckpt::deserialize(trailing), FormatError);
  CHECK_THROWS_AS(ckpt::deserialize(std::span(bytes).first(4)), FormatError);

  auto ck = ckpt::capture(model);
  ck.records.push_back(ck.records.front());
  CHECK_THROWS_AS(ckpt::deserialize(ckpt::serialize(ck)), FormatError);
}

TEST_CASE("restore is all-or-nothing") {
  det::Detector model(toy_config(), 7);
  auto ck = ckpt::capture(model);
  det::Detector target(toy_config(), 8);
  const auto before = ckpt::capture(target);
  ck.records.pop_back();
  CHECK_THROWS_AS(ckpt::restore(ck, target), FormatError);
  CHECK(ckpt::capture(target) == before);

  auto other = toy_config();
  other.embed_dim = 32;
  det::Detector wide(other, 9);
  CHECK_THROWS(ckpt::restore(ckpt::capture(model), wide));
  align::Discriminators discs(16, 1);
  CHECK_THROWS_AS(ckpt::restore(ckpt::capture(model), target, &discs), FormatError);
}
