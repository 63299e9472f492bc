#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "brainenc/dataset.hpp"
#include "brainenc/nenc.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "test_util.hpp"

using namespace brainenc;
using namespace brainenc::data;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

}  // namespace

TEST_CASE("NENC header layout") {
  testutil::TempDir dir("nenc_layout");
  const auto path = dir.path() / "a.nenc";
  write_array(path, nd::Tensor<float>({2, 3}));
  CHECK(fs::file_size(path) == 56);
  CHECK(nenc_header_bytes(2) == 32);
  const auto bytes = slurp(path);
  CHECK(bytes.substr(0, 4) == "NENC");
  CHECK(bytes[4] == 1);   // version, little-endian
  CHECK(bytes[8] == 1);   // float32
  CHECK(bytes[12] == 2);  // rank
  CHECK(bytes[16] == 2);
  CHECK(bytes[24] == 3);

  write_array(path, nd::Tensor<float>({1}, {1.0f}));
  const auto one = slurp(path);
  // 1.0f = 0x3f800000 stored little-endian
  CHECK(static_cast<unsigned char>(one[24]) == 0x00);
  CHECK(static_cast<unsigned char>(one[27]) == 0x3f);
  CHECK(static_cast<unsigned char>(one[26]) == 0x80);
}

TEST_CASE("NENC round trip is bitwise lossless") {
  testutil::TempDir dir("nenc_rt");
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> rank(1, 4), dim(1, 7);
  for (int trial = 0; trial < 50; ++trial) {
    nd::Shape shape(rank(rng));
    for (auto& d : shape) d = dim(rng);
    auto t = testutil::random_tensor<float>(shape, rng, 100.0);
    t[0] = -0.0f;
    const auto path = dir.path() / "x.nenc";
    write_array(path, t);
    const auto back = read_array(path);
    CHECK(back.shape() == t.shape());
    CHECK(std::memcmp(back.data().data(), t.data().data(), t.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("NENC rejects malformed containers") {
  testutil::TempDir dir("nenc_bad");
  const auto path = dir.path() / "a.nenc";
  write_array(path, nd::Tensor<float>({2, 3}, 1.5f));
  const auto good = slurp(path);

  SUBCASE("truncated payload") {
    spit(path, good.substr(0, good.size() - 1));
    CHECK_THROWS_AS(read_array(path), CorruptContainerError);
  }
  SUBCASE("truncated header") {
    spit(path, good.substr(0, 10));
    CHECK_THROWS_AS(read_array(path), CorruptContainerError);
  }
  SUBCASE("bad magic") {
    auto bad = good;
    bad[0] = 'X';
    spit(path, bad);
    CHECK_THROWS_AS(read_array(path), CorruptContainerError);
  }
  SUBCASE("bad version") {
    auto bad = good;
    bad[4] = 2;
    spit(path, bad);
    CHECK_THROWS_AS(read_array(path), CorruptContainerError);
  }
  SUBCASE("bad dtype") {
    auto bad = good;
    bad[8] = 7;
    spit(path, bad);
    CHECK_THROWS_AS(read_array(path), CorruptContainerError);
  }
  SUBCASE("zero rank") {
    auto bad = good;
    bad[12] = 0;
    spit(path, bad);
    CHECK_THROWS_AS(read_array(path), CorruptContainerError);
  }
  SUBCASE("trailing bytes") {
    spit(path, good + "z");
    CHECK_THROWS_AS(read_array(path), CorruptContainerError);
  }
  SUBCASE("absurd dimension") {
    auto bad = good;
    bad[23] = 0x7f;
    spit(path, bad);
    CHECK_THROWS_AS(read_array(path), CorruptContainerError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(read_array(dir.path() / "nope.nenc"), MissingFileError); }
  SUBCASE("empty array cannot be written") {
    std::ostringstream out;
    CHECK_THROWS_AS(write_array(out, nd::Tensor<float>({2, 0})), ArgumentError);
  }
}

TEST_CASE("make_folds") {
  SUBCASE("ten samples in five folds") {
    const auto f = make_folds(10, 5, 0);
    std::vector<int> sizes(5, 0);
    for (auto k : f.fold_of) ++sizes[k];
    for (int s : sizes) CHECK(s == 2);
  }
  SUBCASE("9841 samples") {
    const auto f = make_folds(9841, 5, 3);
    std::multiset<std::size_t> sizes;
    for (std::size_t k = 0; k < 5; ++k) sizes.insert(f.val_indices(k).size());
    CHECK(sizes == std::multiset<std::size_t>{1968, 1968, 1968, 1968, 1969});
  }
  SUBCASE("deterministic in the seed") {
    CHECK(make_folds(100, 5, 9).fold_of == make_folds(100, 5, 9).fold_of);
    CHECK(make_folds(100, 5, 9).fold_of != make_folds(100, 5, 10).fold_of);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(make_folds(3, 5, 0), ArgumentError);
    CHECK_THROWS_AS(make_folds(10, 1, 0), ArgumentError);
  }
  SUBCASE("json round trip") {
    const auto f = make_folds(23, 4, 5);
    const auto g = folds_from_json(folds_to_json(f));
    CHECK(g.fold_of == f.fold_of);
    CHECK(g.n_folds == 4);
  }
}

TEST_CASE("folds partition the samples (property)") {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::size_t> kd(2, 10), nd_(0, 300);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = kd(rng), n = k + nd_(rng);
    const auto f = make_folds(n, k, trial);
    std::vector<std::size_t> all;
    std::size_t lo = n, hi = 0;
    for (std::size_t fold = 0; fold < k; ++fold) {
      const auto val = f.val_indices(fold);
      const auto train = f.train_indices(fold);
      CHECK(val.size() + train.size() == n);
      lo = std::min(lo, val.size());
      hi = std::max(hi, val.size());
      all.insert(all.end(), val.begin(), val.end());
      std::set<std::size_t> tv(train.begin(), train.end());
      for (auto v : val) CHECK(tv.count(v) == 0);
    }
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expect(n);
    std::iota(expect.begin(), expect.end(), 0);
    CHECK(all == expect);
    CHECK(hi - lo <= 1);
  }
}

TEST_CASE("manifest validation") {
  DatasetManifest m;
  m.channel_mean = {0.5, 0.5, 0.5};
  m.channel_std = {0.25, 0.25, 0.25};
  SubjectSpec s;
  s.lh_vertices = 19004;
  s.rh_vertices = 20544;
  s.n_samples = 9841;
  m.subjects.push_back(s);
  SUBCASE("NSD-shaped manifest passes shape validation without arrays") {
    const auto back = manifest_from_json(manifest_to_json(m));
    CHECK(back.subjects[0].lh_vertices == 19004);
    CHECK(back.subjects[0].rh_vertices == 20544);
  }
  SUBCASE("zero std") {
    m.channel_std[1] = 0.0;
    CHECK_THROWS_AS(validate_manifest(m), ValidationError);
  }
  SUBCASE("subject index out of order") {
    m.subjects[0].subject_index = 3;
    CHECK_THROWS_AS(validate_manifest(m), ValidationError);
  }
  SUBCASE("missing key") {
    auto j = manifest_to_json(m);
    j["subjects"][0].erase("lh_vertices");
    CHECK_THROWS_AS(manifest_from_json(j), ValidationError);
  }
}

TEST_CASE("ROI validation never clips") {
  SubjectSpec s;
  s.lh_vertices = 4;
  s.rh_vertices = 3;
  s.rois["lh_ok"] = Roi{Hemisphere::lh, {0, 3}};
  CHECK_NOTHROW(validate_rois(s));
  s.rois["rh_bad"] = Roi{Hemisphere::rh, {1, 3}};
  CHECK_THROWS_AS(validate_rois(s), ValidationError);
  s.rois.erase("rh_bad");
  s.rois["unsorted"] = Roi{Hemisphere::lh, {2, 1}};
  CHECK_THROWS_AS(validate_rois(s), ValidationError);
  s.rois.erase("unsorted");
  const auto back = rois_from_json(rois_to_json(s.rois));
  CHECK(back.at("lh_ok").indices == std::vector<std::size_t>{0, 3});
}

TEST_CASE("dataset save and load") {
  testutil::TempDir dir("dataset");
  const auto ds = testutil::tiny_dataset();
  save_dataset(ds, dir.path());
  const auto subj = dir.path() / "subjects" / "subj01";

  SUBCASE("round trip") {
    const auto back = load_dataset(dir.path());
    REQUIRE(back.subjects.size() == 2);
    CHECK(back.subjects[0].spec.lh_vertices == 6);
    CHECK(back.subjects[1].spec.lh_vertices == 7);
    CHECK(back.subjects[1].lh == ds.subjects[1].lh);
    CHECK(back.subjects[0].images == ds.subjects[0].images);
    CHECK(back.subjects[0].spec.noise_ceiling_rh == ds.subjects[0].spec.noise_ceiling_rh);
    CHECK(back.subjects[0].spec.rois.at("rh_B").indices == std::vector<std::size_t>{1, 3});
    CHECK(back.manifest.channel_mean == ds.manifest.channel_mean);
  }
  SUBCASE("width mismatch names subject and field") {
    write_array(subj / "lh.nenc", nd::Tensor<float>({20, 5}));
    try {
      load_dataset(dir.path());
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("subject 0") != std::string::npos);
      CHECK(msg.find("lh") != std::string::npos);
    }
  }
  SUBCASE("missing array") {
    fs::remove(subj / "nc_rh.nenc");
    CHECK_THROWS_AS(load_dataset(dir.path()), MissingFileError);
  }
  SUBCASE("negative noise ceiling") {
    write_array(subj / "nc_lh.nenc", nd::Tensor<float>({6}, -1.0f));
    CHECK_THROWS_AS(load_dataset(dir.path()), ValidationError);
  }
  SUBCASE("ROI out of range") {
    write_json(subj / "rois.json", rois_to_json({{"lh_A", Roi{Hemisphere::lh, {0, 6}}}}));
    CHECK_THROWS_AS(load_dataset(dir.path()), ValidationError);
  }
  SUBCASE("stored folds must cover the pool") {
    write_json(subj / "folds.json", folds_to_json(make_folds(10, 5, 0)));
    CHECK_THROWS_AS(load_dataset(dir.path()), ValidationError);
  }
}

TEST_CASE("split indices") {
  const auto ds = testutil::tiny_dataset(1, 20, 4);
  const FoldSpec fs{4, 1, 7};
  const auto train = ds.split_indices(0, Split::train, fs);
  const auto val = ds.split_indices(0, Split::val, fs);
  const auto test = ds.split_indices(0, Split::test, fs);
  CHECK(train.size() == 12);
  CHECK(val.size() == 4);
  CHECK(test == std::vector<std::size_t>{16, 17, 18, 19});
  std::set<std::size_t> seen(train.begin(), train.end());
  for (auto v : val) CHECK(seen.insert(v).second);
  for (auto v : seen) CHECK(v < 16);
  CHECK(ds.split_indices(0, Split::all, fs).size() == 20);
  CHECK_THROWS_AS(ds.split_indices(0, Split::val, FoldSpec{4, 4, 7}), ArgumentError);
}

TEST_CASE("normalize_image") {
  DatasetManifest m;
  m.image = ImageDims{1, 2, 2};
  m.channel_mean = {0.0};
  m.channel_std = {1.0};
  const std::vector<float> img{0.1f, 0.2f, 0.3f, 0.4f};
  CHECK(normalize_image(img, m).storage() == img);
  m.channel_mean = {0.5};
  m.channel_std = {0.25};
  const std::vector<float> flat(4, 0.5f);
  const auto zeros = normalize_image(flat, m);
  for (float v : zeros.data()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(normalize_image(std::vector<float>(3, 0.0f), m), ShapeError);
}

TEST_CASE("normalized channels have zero dataset-wide mean") {
  const auto ds = testutil::tiny_dataset(3, 30);
  const auto& d = ds.manifest.image;
  const std::size_t area = d.height * d.width;
  std::vector<double> sum(d.channels, 0.0), sq(d.channels, 0.0);
  double count = 0.0;
  for (const auto& s : ds.subjects) {
    std::vector<std::size_t> all(s.spec.n_samples);
    std::iota(all.begin(), all.end(), 0);
    const auto imgs = gather_images(s, all, ds.manifest);
    for (std::size_t i = 0; i < all.size(); ++i)
      for (std::size_t c = 0; c < d.channels; ++c)
        for (std::size_t k = 0; k < area; ++k) {
          const double v = imgs[(i * d.channels + c) * area + k];
          sum[c] += v;
          sq[c] += v * v;
        }
    count += static_cast<double>(all.size() * area);
  }
  for (std::size_t c = 0; c < d.channels; ++c) {
    CHECK(std::abs(sum[c] / count) < 1e-5);
    CHECK(std::abs(sq[c] / count - 1.0) < 1e-4);
  }
}
