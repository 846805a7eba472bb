@triton.jit
def kernel(input_ptr, output_ptr, n_cols, BLOCK_SIZE: tl.constexpr):
    row = tl.program_id(0)
    cols = tl.arange(0, BLOCK_SIZE)
    best_val = tl.full([BLOCK_SIZE], float("-inf"), tl.float32)
    best_idx = tl.full([BLOCK_SIZE], 0, tl.int64)
    for start in range(0, n_cols, BLOCK_SIZE):
        offs = start + cols
        mask = offs < n_cols
        vals = tl.load(input_ptr + row * n_cols + offs, mask=mask, other=float("-inf"))
        vals = vals.to(tl.float32)
        take = vals > best_val
        best_val = tl.where(take, vals, best_val)
        best_idx = tl.where(take, offs, best_idx)
    top = tl.max(best_val, axis=0)
    candidates = tl.where(best_val == top, best_idx, n_cols)
    tl.store(output_ptr + row, tl.min(candidates, axis=0))
