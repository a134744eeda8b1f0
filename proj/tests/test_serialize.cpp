#include "adaf/serialize.hpp"

#include "adaf/image_png.hpp"
#include "adaf/model.hpp"
#include "doctest.h"
#include "test_util.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace adaf;
using adaf_test::rel_err;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig mc;
  mc.image_h = mc.image_w = 16;
  mc.ae_width = 3;
  mc.latent_c = 2;
  mc.denoiser_width = 3;
  mc.d_attn = 4;
  mc.time_dim = 4;
  mc.time_hidden = 4;
  mc.text_hidden = 4;
  mc.max_len = 6;
  mc.vocab = 7;
  return mc;
}

}  // namespace

TEST_CASE("checkpoint round-trip reproduces forward outputs bitwise") {
  Rng rng(1234);
  SurrogateModel<Real> a;
  a.init(tiny_cfg(), rng);
  a.ae.latent_scale(0, 0) = 1.7;
  const std::string path = "/tmp/adaf_test_ckpt.bin";
  save_checkpoint(path, a, 0xdeadbeefull, 42);

  SurrogateModel<Real> b;
  Rng rng2(999);  // different init, fully overwritten by the load
  b.init(tiny_cfg(), rng2);
  CkptMeta meta = load_checkpoint(path, b);
  CHECK(meta.config_hash == 0xdeadbeefull);
  CHECK(meta.seed == 42);
  CHECK(b.ae.latent_scale(0, 0) == 1.7);

  Rng rx(5);
  Matrix<Real> x = random_uniform<Real>(rx, 16 * 16, 3, 0.0, 1.0);
  Matrix<Real> z = random_normal<Real>(rx, 16, 2);
  Matrix<Real> ctx = random_normal<Real>(rx, 4, 4);
  CHECK(rel_err(a.encode_value(x), b.encode_value(x)) == 0.0);
  CHECK(rel_err(a.decode_value(z), b.decode_value(z)) == 0.0);
  CHECK(rel_err(a.denoise_value(z, 3, ctx), b.denoise_value(z, 3, ctx)) == 0.0);
}

TEST_CASE("checkpoint loading is strict about container and shapes") {
  Rng rng(5);
  SurrogateModel<Real> a;
  a.init(tiny_cfg(), rng);
  const std::string path = "/tmp/adaf_test_ckpt2.bin";
  save_checkpoint(path, a, 1, 1);

  // truncated file
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream out("/tmp/adaf_test_ckpt_trunc.bin", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  SurrogateModel<Real> b;
  Rng rng2(6);
  b.init(tiny_cfg(), rng2);
  CHECK_THROWS_AS(load_checkpoint("/tmp/adaf_test_ckpt_trunc.bin", b), std::runtime_error);

  // bad magic
  {
    std::ofstream out("/tmp/adaf_test_ckpt_magic.bin", std::ios::binary);
    out << "NOTADAF!restoffile";
  }
  CHECK_THROWS_AS(load_checkpoint("/tmp/adaf_test_ckpt_magic.bin", b), std::runtime_error);

  // mismatched shapes (different width model)
  ModelConfig other = tiny_cfg();
  other.ae_width = 4;
  SurrogateModel<Real> c;
  Rng rng3(7);
  c.init(other, rng3);
  CHECK_THROWS_AS(load_checkpoint(path, c), std::runtime_error);

  CHECK_THROWS_AS(load_checkpoint("/tmp/adaf_missing_ckpt.bin", b), std::runtime_error);
}

TEST_CASE("16-bit png round-trips quantized values exactly, with metadata") {
  const int h = 9, w = 7;
  Matrix<Real> img(h * w, 3);
  Rng rng(8);
  for (Eigen::Index i = 0; i < img.rows(); ++i)
    for (Eigen::Index c = 0; c < 3; ++c) {
      // representable values k/65535 survive the round-trip bitwise
      img(i, c) = static_cast<Real>(rng.uniform_int(65536)) / 65535.0;
    }
  const std::string path = "/tmp/adaf_test_img.png";
  write_png16(path, img, h, w, {{"config_hash", "abc123"}, {"seed", "9"}});
  ImageFile f = read_png16(path);
  CHECK(f.h == h);
  CHECK(f.w == w);
  CHECK(rel_err(f.rgb, img) == 0.0);
  CHECK(f.text.at("config_hash") == "abc123");
  CHECK(f.text.at("seed") == "9");

  // arbitrary doubles land within half a quantization step
  Matrix<Real> noisy = random_uniform<Real>(rng, h * w, 3, 0.0, 1.0);
  write_png16(path, noisy, h, w);
  ImageFile g = read_png16(path);
  CHECK((g.rgb - noisy).cwiseAbs().maxCoeff() <= 0.5 / 65535.0 + 1e-12);

  // re-saving a loaded image is lossless
  write_png16(path, g.rgb, h, w);
  ImageFile g2 = read_png16(path);
  CHECK(rel_err(g2.rgb, g.rgb) == 0.0);
}

TEST_CASE("png writer validates ranges and reader validates format") {
  Matrix<Real> bad(4, 3);
  bad.setConstant(1.5);
  CHECK_THROWS_AS(write_png16("/tmp/adaf_bad.png", bad, 2, 2), std::invalid_argument);
  Matrix<Real> neg(4, 3);
  neg.setConstant(-0.1);
  CHECK_THROWS_AS(write_png16("/tmp/adaf_bad.png", neg, 2, 2), std::invalid_argument);
  Matrix<Real> wrong(3, 3);
  CHECK_THROWS_AS(write_png16("/tmp/adaf_bad.png", wrong, 2, 2), std::invalid_argument);
  CHECK_THROWS_AS(read_png16("/tmp/adaf_missing.png"), std::runtime_error);
  {
    std::ofstream f("/tmp/adaf_not_png.png", std::ios::binary);
    f << "hello, definitely not a png";
  }
  CHECK_THROWS_AS(read_png16("/tmp/adaf_not_png.png"), std::runtime_error);
}
