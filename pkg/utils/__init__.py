# Errors, numerics, artifact store and stage graph
