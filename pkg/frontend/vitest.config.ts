import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    testTimeout: 30000,
    hookTimeout: 45000,
    // the live-server suite drives one shared python process; keep it serial
    fileParallelism: false,
  },
});
