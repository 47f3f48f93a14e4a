#include <cstdio>

int main() {
  std::puts("graphmill: subcommands not wired up yet");
  return 1;
}
