// placeholder until the command wiring lands
#include <cstdio>

int main() {
  std::puts("simcor: commands not wired yet");
  return 2;
}
