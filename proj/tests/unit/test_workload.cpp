/* Copyright 2026 The mmsim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mmsim/workload.hpp"

using namespace mmsim;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mmsim_test_workload";
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

const char* kHeader = "arrival_ms,service_id,text_tokens,num_images,image_dims,output_tokens\n";

}  // namespace

TEST_CASE("trace row maps image dimensions to tokens") {
  const fs::path p = temp_file("one.csv");
  write_text(p, std::string(kHeader) + "0,svc,100,1,896x896,64\n");
  const auto r = load_trace(p, model_preset("InternVL-26B"));
  REQUIRE(r.requests.size() == 1);
  CHECK(request_totals(r.requests[0]).image == 1280);
  CHECK(r.requests[0].text_tokens == 100);
  CHECK(r.requests[0].output_tokens == 64);
  CHECK(r.malformed == 0);
}

TEST_CASE("empty trace and out-of-order rows") {
  const fs::path empty = temp_file("empty.csv");
  write_text(empty, kHeader);
  const auto e = load_trace(empty, model_preset("InternVL-26B"));
  CHECK(e.requests.empty());
  CHECK(e.malformed == 0);

  const fs::path p = temp_file("order.csv");
  write_text(p, std::string(kHeader) + "30,a,10,0,,1\n10,a,20,0,,1\n20,a,30,2,500x400;100x100,5\n");
  const auto r = load_trace(p, model_preset("InternVL-26B"));
  REQUIRE(r.requests.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(r.requests[i].id == i);
  CHECK(r.requests[0].arrival_ms == 10.0);
  CHECK(r.requests[1].arrival_ms == 20.0);
  CHECK(r.requests[1].images.size() == 2);
  CHECK(r.requests[2].arrival_ms == 30.0);
}

TEST_CASE("malformed rows above one percent are fatal") {
  const fs::path p = temp_file("bad.csv");
  std::string s = kHeader;
  for (int i = 0; i < 50; ++i) s += std::to_string(i) + ",a,10,0,,1\n";
  s += "x,a,10,0,,1\n";
  write_text(p, s);
  CHECK_THROWS_AS(load_trace(p, model_preset("InternVL-26B")), ConfigError);
  CHECK_THROWS_AS(load_trace(temp_file("missing.csv"), model_preset("InternVL-26B")), ConfigError);

  TraceRecord rec;
  CHECK_FALSE(parse_trace_row("1,a,10,2,100x100,1", rec));
  CHECK_FALSE(parse_trace_row("1,a,-5,0,,1", rec));
  CHECK(parse_trace_row("1.5,a,10,1,100x100,1", rec));
  CHECK(rec.arrival_ms == 1.5);
}

TEST_CASE("trace write and reload preserve the stream") {
  GeneratorConfig g;
  g.base_rate = 5.0;
  const auto& m = model_preset("InternVL-26B");
  const auto stream = generate(g, 60000.0, m);
  const fs::path p = temp_file("rt.csv");
  write_trace(p, stream);
  const auto back = load_trace(p, m).requests;
  REQUIRE(back.size() == stream.size());
  for (std::size_t i = 0; i < stream.size(); ++i) {
    CHECK(back[i].arrival_ms == doctest::Approx(stream[i].arrival_ms));
    CHECK(back[i].text_tokens == stream[i].text_tokens);
    CHECK(request_totals(back[i]).image == request_totals(stream[i]).image);
  }
}

TEST_CASE("generation is deterministic per seed") {
  GeneratorConfig g;
  g.base_rate = 3.0;
  const auto& m = model_preset("Llama3.2-11B");
  const auto a = generate(g, 120000.0, m), b = generate(g, 120000.0, m);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].arrival_ms == b[i].arrival_ms);
    CHECK(a[i].text_tokens == b[i].text_tokens);
    CHECK(a[i].images.size() == b[i].images.size());
  }
  g.seed = 2;
  const auto c = generate(g, 120000.0, m);
  CHECK((c.size() != a.size() || c[0].arrival_ms != a[0].arrival_ms));
}

TEST_CASE("raising the load scale only compresses arrivals") {
  GeneratorConfig g;
  g.base_rate = 2.0;
  const auto& m = model_preset("InternVL-26B");
  const auto a = generate(g, 600000.0, m, 1.0);
  const auto b = generate(g, 600000.0, m, 2.0);
  REQUIRE(b.size() > a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].text_tokens == b[i].text_tokens);
    CHECK(b[i].arrival_ms <= a[i].arrival_ms);
  }
}

TEST_CASE("image-text prompt lengths follow the configured tail exponent") {
  GeneratorConfig g;
  g.base_rate = 100.0;
  g.image_request_fraction = 1.0;
  // A large scale keeps integer rounding out of the estimate.
  g.image_text_len_min = 1000.0;
  const auto s = generate(g, 1200000.0, model_preset("InternVL-26B"));
  REQUIRE(s.size() >= 100000);
  // Hill estimator of the density exponent.
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : s) {
    if (r.text_tokens >= 32768) continue;
    sum += std::log(static_cast<double>(r.text_tokens) / 1000.0);
    ++n;
  }
  const double alpha = 1.0 + static_cast<double>(n) / sum;
  CHECK(alpha == doctest::Approx(4.4).epsilon(0.3 / 4.4));
}

TEST_CASE("burst episodes multiply the arrival rate") {
  GeneratorConfig g;
  g.base_rate = 5.0;
  g.burst_episodes.push_back({100000.0, 50000.0, 3.0, 1.0, -1.0});
  CHECK(burst_rate_multiplier(g, 50000.0) == 1.0);
  CHECK(burst_rate_multiplier(g, 120000.0) == 3.0);
  CHECK(burst_rate_multiplier(g, 150000.0) == 1.0);

  double in_burst = 0.0, outside = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    g.seed = seed;
    for (const auto& r : generate(g, 300000.0, model_preset("InternVL-26B"))) {
      (r.arrival_ms >= 100000.0 && r.arrival_ms < 150000.0 ? in_burst : outside) += 1.0;
    }
  }
  const double ratio = (in_burst / 50.0) / (outside / 250.0);
  CHECK(ratio == doctest::Approx(3.0).epsilon(0.1));
}

TEST_CASE("burst image fraction override") {
  GeneratorConfig g;
  g.base_rate = 50.0;
  g.image_request_fraction = 0.1;
  g.burst_episodes.push_back({0.0, 100000.0, 1.0, 1.0, 0.9});
  std::size_t in = 0, img = 0;
  for (const auto& r : generate(g, 100000.0, model_preset("InternVL-26B"))) {
    ++in;
    img += r.images.empty() ? 0 : 1;
  }
  CHECK(static_cast<double>(img) / in == doctest::Approx(0.9).epsilon(0.05));
}

TEST_CASE("summaries") {
  CHECK(summarize({}).empty);

  std::vector<Request> text;
  for (int i = 0; i < 10; ++i) {
    Request r;
    r.id = i;
    r.arrival_ms = i * 1000.0;
    r.text_tokens = 42;
    text.push_back(r);
  }
  auto s = summarize(text);
  CHECK_FALSE(s.empty);
  CHECK(s.mean_image_qps == 0.0);
  CHECK(s.median_prompt_tokens == 42.0);

  const auto& m = model_preset("InternVL-26B");
  std::vector<Request> same;
  for (int i = 0; i < 10; ++i) {
    Request r;
    r.id = i;
    r.arrival_ms = i * 1000.0;
    r.text_tokens = 10;
    r.images = {make_image(896, 896, m), make_image(896, 896, m), make_image(896, 896, m)};
    same.push_back(r);
  }
  s = summarize(same);
  CHECK(s.median_prompt_tokens == 10.0 + 3 * 1280);
  CHECK(s.median_images_per_request == 3.0);
  CHECK(s.image_requests == 10);
}

TEST_CASE("generator validation") {
  GeneratorConfig g;
  g.image_req_len_alpha = 1.0;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g = GeneratorConfig{};
  g.image_request_fraction = 1.5;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g = GeneratorConfig{};
  g.images_per_request.assign(17, 1.0);
  CHECK_THROWS_AS(g.validate(), ConfigError);
}
