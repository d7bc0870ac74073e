# Local Fisher information - quantum estimation with observables restricted to a subspace
