"""Train the bundled 40 ms recurrent predictors.

Writes the GRU and LSTM model files shipped under src/predsim/data/.
Budgets are sized so the pair trains in roughly fifteen minutes; rerun
after any change to the cell equations, dataset generator, or
normalization scheme.
"""

import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from predsim import rnn

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "predsim", "data")
HORIZON_MS = 40.0


def main():
    X, Y = rnn.build_dataset(horizon_ms=HORIZON_MS, n_windows=20000, seed=3)
    print(f"dataset: {len(X)} windows")
    budgets = {
        "gru": rnn.TrainConfig(learning_rate=0.08, epochs=180, batch_size=64, seed=1, dataset_size=len(X)),
        "lstm": rnn.TrainConfig(learning_rate=0.08, epochs=250, batch_size=64, seed=1, dataset_size=len(X)),
    }
    for cell, cfg in budgets.items():
        t0 = time.time()
        result = rnn.train(rnn.RnnSpec(cell=cell), X, Y, HORIZON_MS, cfg)
        path = os.path.join(OUT_DIR, f"rnn_{cell}_40ms.json")
        result.model.save(path)
        print(
            f"{cell}: loss {result.epoch_losses[0]:.6f} -> {min(result.epoch_losses):.6f} "
            f"({time.time() - t0:.0f} s) -> {path}"
        )


if __name__ == "__main__":
    main()
