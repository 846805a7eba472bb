@triton.jit
def kernel_embed(input_ptr, output_ptr, size, offset, BLOCK_SIZE: tl.constexpr):
    pid = tl.program_id(0)
    offs = pid * BLOCK_SIZE + tl.arange(0, BLOCK_SIZE)
    mask = offs < size * size
    row = offs // size
    col = offs % size
    on_diag = (col - row) == offset
    src = tl.where(offset >= 0, row, col)
    vals = tl.load(input_ptr + src, mask=mask & on_diag, other=0)
    tl.store(output_ptr + offs, vals, mask=mask)


@triton.jit
def kernel_extract(input_ptr, output_ptr, n, step, start, BLOCK_SIZE: tl.constexpr):
    pid = tl.program_id(0)
    offs = pid * BLOCK_SIZE + tl.arange(0, BLOCK_SIZE)
    mask = offs < n
    vals = tl.load(input_ptr + start + offs * step, mask=mask)
    tl.store(output_ptr + offs, vals, mask=mask)
