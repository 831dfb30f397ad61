import sys
import os
import tempfile
from pathlib import Path

# Add project root to sys.path
project_root = Path(__file__).resolve().parent.parent
sys.path.append(str(project_root))

try:
    import numpy as np
    from app.models.config import OUTPUT_DIR, DATA_URL
    from app.models.schemas import BenchSpec, TrainConfig
    from app.core import benchgen, checkpoint, evaluator, trainer
    from app.core.graph import DegreeIndex, add_inverses

    print("✅ Imports successful.")
    print(f"   Project Root: {project_root}")
    print(f"   Output Dir: {OUTPUT_DIR}")
    print(f"   Dataset URL Configured: {bool(DATA_URL)}")

    # 1. Benchmark generator
    print("\nTesting Benchmark Generator...")
    bench = benchgen.generate(BenchSpec(n_entities=80, n_relations=4, n_triples=600, seed=0))
    graph = add_inverses(bench.graph)
    print(f"✅ Graph generated: {graph.n_entities} entities, {len(graph.train)} augmented train triples")
    print(f"   Self-check passed: {bench.check.passed}")

    # 2. Short training run
    print("\nTesting Trainer...")
    idx = DegreeIndex.build(graph)
    cfg = TrainConfig(entity_dim=8, relation_dim=8, epochs=2, negatives=8, method="kg_mixup")
    result = trainer.train(graph, idx, cfg)
    print(f"✅ Trained {len(result.report.epochs)} epochs, final loss {result.report.final_loss:.4f}")

    # 3. Checkpoint round trip
    print("\nTesting Checkpoint...")
    with tempfile.TemporaryDirectory() as tmp:
        path = checkpoint.save_checkpoint(os.path.join(tmp, "model.kgmx"), result.params, cfg, cfg.epochs)
        loaded = checkpoint.load_checkpoint(path)
        if np.allclose(loaded.params.entity, result.params.entity, atol=1e-6):
            print("✅ Checkpoint reloaded.")
        else:
            print("❌ Checkpoint mismatch.")

    # 4. Evaluation
    print("\nTesting Evaluator...")
    results = evaluator.evaluate_queries(result.params, graph.test, evaluator.FilterIndex(graph.all_triples()), idx)
    print(f"✅ Test MRR: {evaluator.mrr(results):.4f} over {len(results)} queries")

    print("\n------------------------------------------------")
    print("Infrastructure verification complete.")
    print("To run the pipeline:")
    print("  python -m app bench --out-dir outputs/bench")
    print("To browse reports:")
    print("  streamlit run app/ui/main.py")

except ImportError as e:
    print(f"❌ Import failed: {e}")
except Exception as e:
    print(f"❌ Error during verification: {e}")
