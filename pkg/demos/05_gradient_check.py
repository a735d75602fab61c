"""Verify every gradient against central finite differences.

The same suite backs the `routerec grad-check` command: each differentiable
primitive is checked on random inputs, then the two full training losses are
checked end to end on a toy network and trajectory.
"""

from routerec import gradcheck

ok, results = gradcheck.run(seed=0, seeds=10)
width = max(len(name) for name in results)
for name in sorted(results):
    tol = gradcheck.FULL_LOSS_TOL if name in ("rnn_loss", "value_loss") \
        else gradcheck.PRIMITIVE_TOL
    status = "ok" if results[name] <= tol else "FAIL"
    print(f"{name:<{width}}  max rel err {results[name]:.2e}  (tol {tol:.0e})  {status}")
print("\noverall:", "PASS" if ok else "FAIL")
