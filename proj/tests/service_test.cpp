#include <thread>

#include <gtest/gtest.h>

#include "pointbrush/synthetic.hpp"
#include "scenes.hpp"
#include "test_util.hpp"
// service.hpp brings in httplib; keep it after the Eigen users.
#include "pointbrush/service.hpp"

namespace pb = pointbrush;
using pbtest::TempDir;

namespace {

// Real server on an ephemeral loopback port.
class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    gen_ = pb::generate_synthetic_sequence(pbtest::three_pin_scene(), 3, 21);
    seq_ = pb::write_sequence(dir_.path(), gen_.clouds, gen_.timestamps, gen_.fps);
    service_ = std::make_unique<pb::SessionService>(pb::Session::open(dir_.path()));
    service_->mount(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }

  void TearDown() override {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  httplib::Result post(const std::string& path, const nlohmann::json& body) {
    return client_->Post(path, body.dump(), "application/json");
  }

  static nlohmann::json json_of(const httplib::Result& r) { return nlohmann::json::parse(r->body); }

  TempDir dir_{"service"};
  pb::GeneratedSequence gen_;
  pb::FrameSequence seq_;
  std::unique_ptr<pb::SessionService> service_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::unique_ptr<httplib::Client> client_;
};

std::string as_string(const pb::Bytes& b) { return {b.begin(), b.end()}; }

}  // namespace

TEST_F(ServiceTest, SequenceInfo) {
  const auto r = client_->Get("/api/sequence");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  const auto j = json_of(r);
  EXPECT_EQ(j["frame_count"], 3);
  EXPECT_EQ(j["fps"], gen_.fps);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(j["point_counts"][i], gen_.clouds[i].size());
  EXPECT_EQ(r->body.find("\"frame_count\""), 1u);  // field order is stable
}

TEST_F(ServiceTest, FrameIsByteIdenticalToFile) {
  for (std::size_t i = 0; i < 3; ++i) {
    const auto r = client_->Get("/api/frame/" + std::to_string(i));
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    EXPECT_EQ(r->get_header_value("Content-Type"), "application/octet-stream");
    EXPECT_EQ(r->body, as_string(pb::read_file(seq_.frame_path(i))));
  }
  const auto missing = client_->Get("/api/frame/3");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(json_of(missing)["error"], "frame index out of range: 3");
  const auto huge = client_->Get("/api/frame/99999999999999999999999");
  ASSERT_TRUE(huge);
  EXPECT_EQ(huge->status, 404);
}

TEST_F(ServiceTest, BrushThenMaskThenUndo) {
  const auto before = client_->Get("/api/mask/1");
  ASSERT_TRUE(before);
  EXPECT_EQ(before->body, as_string(pb::write_mask(pb::LabelMask(gen_.clouds[1].size()))));

  const auto stored = pb::read_frame_file(seq_.frame_path(1)).cloud;
  const auto& p = stored[10].position;
  const auto r = post("/api/brush", {{"frame", 1}, {"center", {p.x(), p.y(), p.z()}}, {"radius", 0.05}, {"label", 2}});
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200) << r->body;
  const std::size_t want = pbtest::brute_radius(stored.positions(), p, 0.05).size();
  EXPECT_EQ(json_of(r)["changed"], want);

  const auto after = client_->Get("/api/mask/1");
  const auto mask = pb::read_mask(std::span(reinterpret_cast<const std::uint8_t*>(after->body.data()), after->body.size()));
  EXPECT_EQ(mask.indices_of(2).size(), want);
  // autosaved sidecar matches what the API serves
  EXPECT_EQ(as_string(pb::read_file(seq_.mask_path(1))), after->body);

  const auto u = client_->Post("/api/undo");
  ASSERT_TRUE(u);
  EXPECT_EQ(json_of(u)["frame"], 1);
  EXPECT_EQ(client_->Get("/api/mask/1")->body, before->body);
  const auto again = client_->Post("/api/undo");
  EXPECT_EQ(again->status, 400);
  EXPECT_EQ(json_of(again)["error"], "nothing to undo");
}

TEST_F(ServiceTest, PropagateReportsAndWritesMasks) {
  // paint label 1 on frame 0 from ground truth, one point at a time, at the
  // float-rounded positions stored on disk
  const auto stored = pb::read_frame_file(seq_.frame_path(0)).cloud;
  for (const std::size_t i : gen_.truth_masks[0].indices_of(1)) {
    service_->session().apply_brush(0, stored[i].position, 0.0, 1);
  }
  ASSERT_EQ(service_->session().mask(0).indices_of(1), gen_.truth_masks[0].indices_of(1));
  const auto r = post("/api/propagate", {{"from", 0}, {"to", 2}, {"mode", "color"}});
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200) << r->body;
  const auto j = json_of(r);
  ASSERT_EQ(j.size(), 2u);
  EXPECT_EQ(j[0]["from"], 0);
  EXPECT_EQ(j[1]["to"], 2);
  EXPECT_EQ(j[1]["labels"]["1"]["failed"], false);
  const auto m = pb::read_mask_file(seq_.mask_path(2));
  EXPECT_GE(pbtest::label_iou(m, gen_.truth_masks[2], 1), 0.9);

  const auto bad = post("/api/propagate", {{"from", 1}, {"to", 5}});
  EXPECT_EQ(bad->status, 404);
  const auto wrong_mode = post("/api/propagate", {{"from", 0}, {"to", 1}, {"mode", "rgb"}});
  EXPECT_EQ(wrong_mode->status, 400);
}

TEST_F(ServiceTest, PaletteAndParams) {
  const auto pal = client_->Get("/api/palette");
  EXPECT_EQ(pal->body, pb::to_json(pb::LabelPalette::defaults()).dump());
  const std::string custom = R"([{"id":9,"name":"cup","color":[1,2,3]}])";
  const auto put = client_->Put("/api/palette", custom, "application/json");
  ASSERT_EQ(put->status, 200) << put->body;
  EXPECT_EQ(put->body, custom);
  EXPECT_EQ(client_->Get("/api/palette")->body, custom);
  EXPECT_EQ(client_->Put("/api/palette", R"([{"id":0,"name":"x","color":[0,0,0]}])", "application/json")->status,
            400);

  const auto params = client_->Put("/api/params", R"({"k_neighbors": 4, "assign_radius": 0.01})", "application/json");
  ASSERT_EQ(params->status, 200) << params->body;
  EXPECT_EQ(json_of(params)["k_neighbors"], 4);
  EXPECT_EQ(json_of(client_->Get("/api/params"))["assign_radius"], 0.01);
  const auto unknown = client_->Put("/api/params", R"({"warp": 1})", "application/json");
  EXPECT_EQ(unknown->status, 400);
  EXPECT_EQ(json_of(unknown)["error"], "unknown parameter 'warp'");

  // settings survive a reopen
  const auto reopened = pb::Session::open(dir_.path());
  EXPECT_EQ(reopened.params().icp.k_neighbors, 4u);
  EXPECT_EQ(reopened.palette().entries().front().id, 9u);
}

TEST_F(ServiceTest, MalformedRequests) {
  EXPECT_EQ(client_->Post("/api/brush", "{not json", "application/json")->status, 400);
  EXPECT_EQ(post("/api/brush", {{"frame", 0}})->status, 400);
  EXPECT_EQ(post("/api/brush", {{"frame", 0}, {"center", {0, 0}}, {"radius", 0.1}, {"label", 1}})->status, 400);
  EXPECT_EQ(post("/api/brush", {{"frame", 0}, {"center", {0, 0, 0}}, {"radius", 0.1}, {"label", 77}})->status, 400);
  EXPECT_EQ(post("/api/brush", {{"frame", 7}, {"center", {0, 0, 0}}, {"radius", 0.1}, {"label", 1}})->status, 404);
  EXPECT_EQ(client_->Get("/api/mask/3")->status, 404);
  EXPECT_EQ(client_->Get("/api/nothing")->status, 404);
}

TEST_F(ServiceTest, ConcurrentClientsSerializeMutations) {
  std::vector<std::thread> workers;
  std::atomic<int> ok{0};
  for (int w = 0; w < 4; ++w) {
    workers.emplace_back([&, w] {
      httplib::Client c("127.0.0.1", port_);
      for (int k = 0; k < 10; ++k) {
        const auto& p = gen_.clouds[0][static_cast<std::size_t>(w * 100 + k)].position;
        const nlohmann::json body{{"frame", 0}, {"center", {p.x(), p.y(), p.z()}}, {"radius", 0.01}, {"label", w + 1}};
        const auto r = c.Post("/api/brush", body.dump(), "application/json");
        if (r && r->status == 200) ++ok;
        c.Get("/api/mask/0");
      }
    });
  }
  for (auto& t : workers) t.join();
  EXPECT_EQ(ok.load(), 40);
  EXPECT_EQ(service_->session().undo_depth(), 40u);
}

TEST(ServiceInMemory, FrameBytesAreEncodedOnTheFly) {
  std::mt19937_64 rng(22);
  const auto cloud = pbtest::random_cloud(rng, 30);
  pb::SessionService svc(pb::Session({cloud}, 10.0));
  const auto r = svc.frame(0);
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(r.body, as_string(pb::write_frame(cloud, 0)));
  EXPECT_EQ(svc.frame(1).status, 404);
}
