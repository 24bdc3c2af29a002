// Library walkthrough: generate a small corpus, train briefly, then run a few
// chat turns and show what lands in the memory pool.
//
//   quickstart [steps]

#include <iostream>

#include "unimc/pipeline/chat.hpp"
#include "unimc/training/trainer.hpp"

using namespace unimc;

int main(int argc, char** argv) {
  const int steps = argc > 1 ? std::atoi(argv[1]) : 150;

  const auto c = corpus::generate_corpus(40, 7);
  const auto data = training::TrainingSet::build(c, training::ExampleOptions{});
  std::cout << "corpus: " << c.manifest.total_turns << " turns; examples cs=" << data.cs.size()
            << " mr=" << data.mr.size() << " mag=" << data.mag.size() << "\n";

  model::ModelConfig mc;
  mc.d_model = 32;
  model::Model<float> m(mc);
  training::TrainConfig tc;
  tc.epochs = 100;
  tc.max_steps = steps;
  tc.adam.lr = 1e-3;
  training::train(m, data, tc, [](const training::StepLog& s) {
    if (s.step % 50 == 0) std::cout << "step " << s.step << " loss " << s.total << "\n";
  });

  pipeline::ChatState<float> state;
  pipeline::DecodeConfig dc;
  dc.max_new_tokens = 40;
  for (const char* line : {"hi, how are you?", "by the way, i have a cat.", "what should i buy at the pet shop?"}) {
    const auto t = pipeline::chat_step(state, line, m, dc);
    std::cout << "user: " << line << "\nbot:  " << t.response << "\n";
    for (std::size_t i = 0; i < t.retrieved.size(); ++i)
      std::cout << "      retrieved " << t.retrieved_ids[i] << ": " << t.retrieved[i].text << "\n";
    for (const auto& p : t.written) std::cout << "      wrote " << model::role_name(p.owner) << ": " << p.text << "\n";
  }
  std::cout << "pool size " << state.pool.size() << "\n";
}
