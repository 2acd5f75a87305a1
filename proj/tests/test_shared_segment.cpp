#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "helpers.hpp"
#include "mrm/shared_segment.hpp"

using namespace mrm;
using namespace mrm::shm;

TEST_CASE("create, write, seal, attach") {
  Segment seg = Segment::create("alexnet", 4096);
  CHECK(seg.handle().length == 4096);
  CHECK_FALSE(seg.handle().sealed);
  CHECK(seg.handle().token.rfind("mrm.", 0) == 0);
  CHECK(seg.handle().token.size() <= 200);

  // zero-filled on creation
  auto w = seg.data();
  CHECK(std::all_of(w.begin(), w.end(), [](uint8_t b) { return b == 0; }));

  std::vector<uint8_t> payload = test::pattern_bytes(4096);
  std::memcpy(w.data(), payload.data(), payload.size());
  seg.seal();
  CHECK(seg.handle().sealed);

  Attachment a = Attachment::attach(seg.handle().token, seg.handle().generation);
  CHECK(a.length() == 4096);
  CHECK(std::equal(payload.begin(), payload.end(), a.view().begin()));

  // repeated attaches observe identical bytes
  Attachment b = Attachment::attach(seg.handle().token, seg.handle().generation);
  CHECK(std::equal(a.view().begin(), a.view().end(), b.view().begin()));
}

TEST_CASE("zero length is rejected") {
  try {
    Segment::create("x", 0);
    FAIL("expected InvalidArgument");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InvalidArgument);
  }
}

TEST_CASE("same hint twice yields distinct tokens") {
  Segment a = Segment::create("dup", 64);
  Segment b = Segment::create("dup", 64);
  CHECK(a.handle().token != b.handle().token);
}

TEST_CASE("seal discipline") {
  Segment seg = Segment::create("seal", 128);
  seg.seal();
  try {
    seg.seal();
    FAIL("expected AlreadySealed");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::AlreadySealed);
  }
  try {
    seg.data();
    FAIL("expected AlreadySealed on write access");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::AlreadySealed);
  }
}

TEST_CASE("attach before seal is refused") {
  Segment seg = Segment::create("unsealed", 128);
  try {
    Attachment::attach(seg.handle().token, seg.handle().generation);
    FAIL("expected NotSealed");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NotSealed);
  }
}

TEST_CASE("stale generation and missing segments") {
  Segment seg = Segment::create("gen", 128);
  seg.seal();
  try {
    Attachment::attach(seg.handle().token, seg.handle().generation - 1);
    FAIL("expected StaleGeneration");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::StaleGeneration);
  }

  std::string token = seg.handle().token;
  seg.destroy();
  try {
    Attachment::attach(token, 1);
    FAIL("expected NoSuchSegment");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NoSuchSegment);
  }
}

TEST_CASE("attached view survives owner destruction") {
  std::vector<uint8_t> payload = test::pattern_bytes(2048, 3);
  Attachment a;
  {
    Segment seg = Segment::create("lifetime", 2048);
    std::memcpy(seg.data().data(), payload.data(), payload.size());
    seg.seal();
    a = Attachment::attach(seg.handle().token, seg.handle().generation);
    seg.destroy();  // unlinks the name while the reader is attached
  }
  CHECK(std::equal(payload.begin(), payload.end(), a.view().begin()));
}

TEST_CASE("granularity validation") {
  CHECK(valid_granularity(ShareGranularity::model()));
  CHECK(valid_granularity(ShareGranularity::layer()));
  CHECK(valid_granularity(ShareGranularity::block(64)));
  CHECK(valid_granularity(ShareGranularity::block(2 * 1024 * 1024)));
  CHECK_FALSE(valid_granularity(ShareGranularity::block(0)));
  CHECK_FALSE(valid_granularity(ShareGranularity::block(100)));
}

TEST_CASE("layout_for covers the blob exactly at every granularity") {
  // 3 tensors with deliberately unaligned sizes so padding gaps exist.
  model::ModelManifest m = model::make_manifest(
      {"t", "layout", "1"},
      {{"a", {3}, model::DType::F64}, {"b", {17}, model::DType::F64}, {"c", {5}, model::DType::F64}},
      0);

  for (auto g : {ShareGranularity::model(), ShareGranularity::layer(),
                 ShareGranularity::block(64), ShareGranularity::block(128)}) {
    ObjectLayout layout = layout_for(m, g);
    REQUIRE(!layout.objects.empty());
    uint64_t pos = 0;
    uint64_t sum = 0;
    for (const auto& o : layout.objects) {
      CHECK(o.offset == pos);  // concatenation reproduces the blob
      pos += o.length;
      sum += o.length;
    }
    CHECK(sum == m.blob_bytes);
  }

  CHECK(layout_for(m, ShareGranularity::model()).objects.size() == 1);
  CHECK(layout_for(m, ShareGranularity::layer()).objects.size() == 3);
}

TEST_CASE("layout_for matches the published object counts") {
  // Model granularity exports one object; layer granularity one per tensor.
  std::vector<model::TensorDecl> decls;
  for (int i = 0; i < 16; ++i)
    decls.push_back({"l" + std::to_string(i), {64}, model::DType::F64});
  model::ModelManifest m = model::make_manifest({"mxnet", "alexnet", "1.0.0"}, decls, 0);
  CHECK(layout_for(m, ShareGranularity::model()).objects.size() == 1);
  CHECK(layout_for(m, ShareGranularity::layer()).objects.size() == 16);

  // 5 MiB blob in 2 MiB blocks -> 2 MiB, 2 MiB, 1 MiB.
  model::ModelManifest big = model::make_manifest(
      {"t", "blocks", "1"}, {{"w", {5 * 1024 * 1024 / 8}, model::DType::F64}}, 0);
  ObjectLayout blocks = layout_for(big, ShareGranularity::block(2 * 1024 * 1024));
  REQUIRE(blocks.objects.size() == 3);
  CHECK(blocks.objects[0].length == 2 * 1024 * 1024);
  CHECK(blocks.objects[1].length == 2 * 1024 * 1024);
  CHECK(blocks.objects[2].length == 1 * 1024 * 1024);
}

TEST_CASE("empty blob still yields one object") {
  model::ModelManifest m = model::make_manifest({"t", "empty", "1"}, {}, 0);
  for (auto g : {ShareGranularity::model(), ShareGranularity::layer(), ShareGranularity::block(64)}) {
    ObjectLayout layout = layout_for(m, g);
    REQUIRE(layout.objects.size() == 1);
    CHECK(layout.objects[0].length == 0);
  }
}

TEST_CASE("orphan cleanup removes only dead-owner segments") {
  Segment live = Segment::create("orphan", 64);
  live.seal();
  int removed = cleanup_orphans();  // our pid is alive, nothing of ours goes
  (void)removed;
  CHECK_NOTHROW(Attachment::attach(live.handle().token, live.handle().generation));
}
